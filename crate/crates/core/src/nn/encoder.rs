//! Image sequentialization, patch/position embedding, the pre-norm
//! transformer stack and the hybrid CNN feature extractor.

use alloc::vec::Vec;

use crate::error::{config_err, Result};
use crate::nn::config::{EncoderKind, ModelConfig};
use crate::nn::init::Initializer;
use crate::nn::layers::{Conv, GroupNorm, LayerNorm, Linear};
use crate::nn::parameters;
use crate::ops::resize::resample_bilinear;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Cuts `x: [C,H,W]` into non-overlapping `P×P` patches, giving `[N, C·P·P]`.
/// Rows follow the patch grid in row-major order; each row is laid out
/// channel-major, then patch row, then patch column.
pub fn sequentialize<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, patch: usize) -> Result<Var> {
    let &[c, h, w] = tape.shape(x) else {
        return Err(config_err!("sequentialize expects [C,H,W], got {:?}", tape.shape(x)));
    };
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(config_err!("input {h}x{w} is not divisible by patch size {patch}"));
    }
    let (gh, gw) = (h / patch, w / patch);
    let r = tape.reshape(x, &[c, gh, patch, gw, patch])?;
    let p = tape.permute(r, &[1, 3, 0, 2, 4])?;
    tape.reshape(p, &[gh * gw, c * patch * patch])
}

/// Inverse of [`sequentialize`].
pub fn unsequentialize<T: Scalar>(
    tape: &mut Tape<'_, T>,
    seq: Var,
    channels: usize,
    (h, w): (usize, usize),
    patch: usize,
) -> Result<Var> {
    let (gh, gw) = (h / patch, w / patch);
    let r = tape.reshape(seq, &[gh, gw, channels, patch, patch])?;
    let p = tape.permute(r, &[2, 0, 3, 1, 4])?;
    tape.reshape(p, &[channels, h, w])
}

/// Linear patch projection plus learned position embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedding<T> {
    /// `[patch_dim, D]`.
    pub projection: Tensor<T>,
    /// `[N, D]`.
    pub position: Tensor<T>,
    pub patch: usize,
    pub grid: (usize, usize),
}
parameters!(PatchEmbedding { projection, position });

impl<T: Scalar> PatchEmbedding<T> {
    pub fn new(init: &mut Initializer, patch_dim: usize, hidden: usize, patch: usize, grid: (usize, usize)) -> Self {
        Self {
            projection: init.truncated_normal(&[patch_dim, hidden], 0.02),
            position: init.truncated_normal(&[grid.0 * grid.1, hidden], 0.02),
            patch,
            grid,
        }
    }

    pub fn seq_len(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    /// `z₀ = patches·E + E_pos`.
    pub fn embed<'a>(&'a self, tape: &mut Tape<'a, T>, patches: Var) -> Result<Var> {
        let shape = tape.shape(patches);
        if shape.len() != 2 || shape[1] != self.projection.shape()[0] {
            return Err(config_err!(
                "patch rows {:?} do not match projection input width {}",
                shape,
                self.projection.shape()[0]
            ));
        }
        if shape[0] != self.seq_len() {
            return Err(config_err!(
                "sequence of {} tokens does not match position embedding for {}",
                shape[0],
                self.seq_len()
            ));
        }
        let e = tape.param(&self.projection);
        let pos = tape.param(&self.position);
        let z = tape.matmul(patches, e)?;
        tape.add(z, pos)
    }

    /// Re-grids the position embedding by bilinear interpolation over the token grid.
    pub fn resize_grid(&mut self, grid: (usize, usize)) {
        if grid == self.grid {
            return;
        }
        let d = self.position.shape()[1];
        // [N, D] → [D, gh, gw] → resample → [N', D]
        let (n, gh, gw) = (self.seq_len(), self.grid.0, self.grid.1);
        let src = self.position.data();
        let mut channel_major = Vec::with_capacity(n * d);
        for c in 0..d {
            channel_major.extend((0..n).map(|t| src[t * d + c]));
        }
        let resized = resample_bilinear(&channel_major, d, (gh, gw), grid);
        let n2 = grid.0 * grid.1;
        let data = (0..n2 * d).map(|i| resized[(i % d) * n2 + i / d]).collect();
        self.position = Tensor::new(&[n2, d], data).expect("extents match").requiring_grad();
        self.grid = grid;
    }
}

/// One pre-norm transformer layer: `z' = z + MSA(LN(z))`, `z'' = z' + MLP(LN(z'))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLayer<T> {
    pub attn_norm: LayerNorm<T>,
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
    pub mlp_norm: LayerNorm<T>,
    pub mlp_in: Linear<T>,
    pub mlp_out: Linear<T>,
    pub heads: usize,
}
parameters!(TransformerLayer { attn_norm, query, key, value, output, mlp_norm, mlp_in, mlp_out });

impl<T: Scalar> TransformerLayer<T> {
    pub fn new(init: &mut Initializer, hidden: usize, heads: usize, mlp_dim: usize) -> Self {
        Self {
            attn_norm: LayerNorm::new(hidden),
            query: Linear::new(init, hidden, hidden),
            key: Linear::new(init, hidden, hidden),
            value: Linear::new(init, hidden, hidden),
            output: Linear::new(init, hidden, hidden),
            mlp_norm: LayerNorm::new(hidden),
            mlp_in: Linear::new(init, hidden, mlp_dim),
            mlp_out: Linear::new(init, mlp_dim, hidden),
            heads,
        }
    }

    fn split_heads<'a>(&self, tape: &mut Tape<'a, T>, x: Var) -> Result<Var> {
        let &[n, d] = tape.shape(x) else { unreachable!("linear output is a matrix") };
        let r = tape.reshape(x, &[n, self.heads, d / self.heads])?;
        tape.permute(r, &[1, 0, 2])
    }

    /// Multi-head self-attention on already-normalized tokens. Returns the
    /// projected output and the `[h, N, N]` attention weights.
    pub fn attention<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var) -> Result<(Var, Var)> {
        let &[n, d] = tape.shape(x) else {
            return Err(config_err!("attention expects [N, D], got {:?}", tape.shape(x)));
        };
        let q = self.query.forward(tape, x)?;
        let k = self.key.forward(tape, x)?;
        let v = self.value.forward(tape, x)?;
        let (q, k, v) = (self.split_heads(tape, q)?, self.split_heads(tape, k)?, self.split_heads(tape, v)?);
        let scores = tape.matmul_transposed(q, k)?;
        let scale = T::ONE / T::from_usize(d / self.heads).sqrt();
        let scores = tape.scale(scores, scale)?;
        let weights = tape.softmax(scores, 2)?;
        let ctx = tape.matmul(weights, v)?;
        let ctx = tape.permute(ctx, &[1, 0, 2])?;
        let ctx = tape.reshape(ctx, &[n, d])?;
        Ok((self.output.forward(tape, ctx)?, weights))
    }

    pub fn msa_block<'a>(&'a self, tape: &mut Tape<'a, T>, z: Var) -> Result<Var> {
        let normed = self.attn_norm.forward(tape, z)?;
        let (a, _) = self.attention(tape, normed)?;
        tape.add(z, a)
    }

    pub fn mlp_block<'a>(&'a self, tape: &mut Tape<'a, T>, z: Var) -> Result<Var> {
        let normed = self.mlp_norm.forward(tape, z)?;
        let h = self.mlp_in.forward(tape, normed)?;
        let h = tape.gelu(h)?;
        let h = self.mlp_out.forward(tape, h)?;
        tape.add(z, h)
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a, T>, z: Var) -> Result<Var> {
        let z = self.msa_block(tape, z)?;
        self.mlp_block(tape, z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection<T> {
    pub conv: Conv<T>,
    pub norm: GroupNorm<T>,
}
parameters!(Projection { conv, norm });

/// `relu(shortcut(x) + conv2(relu(gn(conv1(x)))))`; `conv2` starts at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock<T> {
    pub conv1: Conv<T>,
    pub norm1: GroupNorm<T>,
    pub conv2: Conv<T>,
    pub shortcut: Option<Projection<T>>,
}
parameters!(ResidualBlock { conv1, norm1, conv2, shortcut });

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(init: &mut Initializer, c_in: usize, c_out: usize, stride: usize, max_groups: usize) -> Self {
        let shortcut = (stride != 1 || c_in != c_out).then(|| Projection {
            conv: Conv::new(init, c_in, c_out, 1, stride, false),
            norm: GroupNorm::new(c_out, max_groups),
        });
        Self {
            conv1: Conv::new(init, c_in, c_out, 3, stride, false),
            norm1: GroupNorm::new(c_out, max_groups),
            conv2: Conv::new(init, c_out, c_out, 3, 1, false).zeroed(),
            shortcut,
        }
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(tape, x)?;
        let h = self.norm1.forward(tape, h)?;
        let h = tape.relu(h)?;
        let h = self.conv2.forward(tape, h)?;
        let s = match &self.shortcut {
            Some(p) => {
                let s = p.conv.forward(tape, x)?;
                p.norm.forward(tape, s)?
            }
            None => x,
        };
        let sum = tape.add(h, s)?;
        tape.relu(sum)
    }
}

/// Desk-scale residual CNN emitting feature maps at 1/2, 1/4, 1/8 and 1/16.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone<T> {
    pub stem: Conv<T>,
    pub stem_norm: GroupNorm<T>,
    pub stages: Vec<Vec<ResidualBlock<T>>>,
}
parameters!(Backbone { stem, stem_norm, stages });

impl<T: Scalar> Backbone<T> {
    pub fn new(init: &mut Initializer, in_channels: usize, widths: [usize; 4], max_groups: usize) -> Self {
        let stages = (1..4)
            .map(|i| {
                alloc::vec![
                    ResidualBlock::new(init, widths[i - 1], widths[i], 2, max_groups),
                    ResidualBlock::new(init, widths[i], widths[i], 1, max_groups),
                ]
            })
            .collect();
        Self {
            stem: Conv::new(init, in_channels, widths[0], 3, 2, false),
            stem_norm: GroupNorm::new(widths[0], max_groups),
            stages,
        }
    }

    /// Feature maps at `[1/2, 1/4, 1/8, 1/16]` resolution.
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var) -> Result<[Var; 4]> {
        let h = self.stem.forward(tape, x)?;
        let h = self.stem_norm.forward(tape, h)?;
        let mut h = tape.relu(h)?;
        let mut taps = [h; 4];
        for (i, stage) in self.stages.iter().enumerate() {
            for block in stage {
                h = block.forward(tape, h)?;
            }
            taps[i + 1] = h;
        }
        Ok(taps)
    }
}

/// Encoder output: final token sequence plus the CNN skip taps (finest first).
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub tokens: Var,
    pub skips: Option<[Var; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub backbone: Option<Backbone<T>>,
    pub embedding: PatchEmbedding<T>,
    pub layers: Vec<TransformerLayer<T>>,
    pub norm: LayerNorm<T>,
}
parameters!(Encoder { backbone, embedding, layers, norm });

impl<T: Scalar> Encoder<T> {
    pub fn new(init: &mut Initializer, cfg: &ModelConfig) -> Self {
        let backbone = (cfg.encoder == EncoderKind::Hybrid)
            .then(|| Backbone::new(init, cfg.in_channels, cfg.backbone_widths, cfg.norm_groups));
        let embedding = PatchEmbedding::new(init, cfg.patch_dim(), cfg.hidden, cfg.patch_size, cfg.token_grid());
        let layers = (0..cfg.layers)
            .map(|_| TransformerLayer::new(init, cfg.hidden, cfg.heads, cfg.mlp_dim))
            .collect();
        Self {
            backbone,
            embedding,
            layers,
            norm: LayerNorm::new(cfg.hidden),
        }
    }

    /// Transformer stack plus final norm over an embedded sequence.
    pub fn transform<'a>(&'a self, tape: &mut Tape<'a, T>, z0: Var) -> Result<Var> {
        let mut z = z0;
        for layer in &self.layers {
            z = layer.forward(tape, z)?;
        }
        self.norm.forward(tape, z)
    }

    /// Pure-ViT path: sequentialize → embed → L layers → norm.
    pub fn encode_vit<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var) -> Result<Var> {
        let patches = sequentialize(tape, x, self.embedding.patch)?;
        let z0 = self.embedding.embed(tape, patches)?;
        self.transform(tape, z0)
    }

    /// Hybrid path: CNN features, 1×1 patches of the 1/16 map, transformer.
    pub fn encode_hybrid<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var) -> Result<(Var, [Var; 3])> {
        let backbone = self
            .backbone
            .as_ref()
            .ok_or_else(|| config_err!("encode_hybrid called on a pure-ViT encoder"))?;
        let [f2, f4, f8, f16] = backbone.forward(tape, x)?;
        let tokens = sequentialize(tape, f16, 1)?;
        let z0 = self.embedding.embed(tape, tokens)?;
        Ok((self.transform(tape, z0)?, [f2, f4, f8]))
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var) -> Result<Encoded> {
        if self.backbone.is_some() {
            let (tokens, skips) = self.encode_hybrid(tape, x)?;
            Ok(Encoded { tokens, skips: Some(skips) })
        } else {
            Ok(Encoded { tokens: self.encode_vit(tape, x)?, skips: None })
        }
    }
}
