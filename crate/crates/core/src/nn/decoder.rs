//! Naive upsampling head and the cascaded upsampler (CUP).

use alloc::vec::Vec;

use crate::error::{config_err, contract_err, Result};
use crate::nn::config::{DecoderKind, EncoderKind, ModelConfig};
use crate::nn::init::Initializer;
use crate::nn::layers::{Conv, GroupNorm};
use crate::nn::{join, parameters, Parameters};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `[N, D]` tokens back onto the `[D, gh, gw]` grid (row-major token order).
pub fn reshape_hidden<T: Scalar>(tape: &mut Tape<'_, T>, z: Var, grid: (usize, usize)) -> Result<Var> {
    let &[n, d] = tape.shape(z) else {
        return Err(contract_err!("hidden sequence must be [N, D], got {:?}", tape.shape(z)));
    };
    if n != grid.0 * grid.1 {
        return Err(contract_err!(
            "{n} tokens cannot be laid out on a {}x{} grid",
            grid.0,
            grid.1
        ));
    }
    let t = tape.transpose(z)?;
    tape.reshape(t, &[d, grid.0, grid.1])
}

/// Resolution exponent `e` (scale 1/2^e) of each skip tap, finest first.
const SKIP_SCALES: [u32; 3] = [1, 2, 3];

/// Whether a block producing scale 1/2^e receives a skip for `skip_count`.
pub fn receives_skip(skip_count: usize, exponent: u32) -> bool {
    match skip_count {
        3 => SKIP_SCALES.contains(&exponent),
        1 => exponent == 2,
        _ => false,
    }
}

/// 2× bilinear upsample → optional skip concat → 3×3 conv → group norm → relu.
#[derive(Debug, Clone, PartialEq)]
pub struct CupBlock<T> {
    pub conv: Conv<T>,
    pub norm: GroupNorm<T>,
    pub skip_channels: usize,
    /// Output scale is 1/2^exponent.
    pub exponent: u32,
}
parameters!(CupBlock { conv, norm });

impl<T: Scalar> CupBlock<T> {
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var, skip: Option<Var>) -> Result<Var> {
        let up = tape.upsample2x(x)?;
        let merged = match (skip, self.skip_channels) {
            (None, 0) => up,
            (Some(s), c) if c > 0 => {
                let (us, ss) = (tape.shape(up), tape.shape(s));
                if ss.len() != 3 || ss[0] != c || ss[1..] != us[1..] {
                    return Err(config_err!(
                        "skip at 1/{} scale has shape {:?}, expected [{c}, {}, {}]",
                        1usize << self.exponent,
                        ss,
                        us[1],
                        us[2]
                    ));
                }
                tape.concat_channels(&[up, s])?
            }
            (Some(_), _) => {
                return Err(config_err!(
                    "block at 1/{} scale takes no skip-connection",
                    1usize << self.exponent
                ))
            }
            (None, _) => {
                return Err(config_err!(
                    "missing skip-connection at 1/{} scale",
                    1usize << self.exponent
                ))
            }
        };
        let h = self.conv.forward(tape, merged)?;
        let h = self.norm.forward(tape, h)?;
        tape.relu(h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decoder<T> {
    Naive { head: Conv<T> },
    Cup { blocks: Vec<CupBlock<T>>, head: Conv<T> },
}

impl<T: Scalar> Parameters<T> for Decoder<T> {
    fn visit<'s>(&'s self, prefix: &str, out: &mut Vec<(alloc::string::String, &'s Tensor<T>)>) {
        match self {
            Decoder::Naive { head } => head.visit(&join(prefix, "head"), out),
            Decoder::Cup { blocks, head } => {
                blocks.visit(&join(prefix, "blocks"), out);
                head.visit(&join(prefix, "head"), out);
            }
        }
    }
    fn visit_mut<'s>(&'s mut self, prefix: &str, out: &mut Vec<(alloc::string::String, &'s mut Tensor<T>)>) {
        match self {
            Decoder::Naive { head } => head.visit_mut(&join(prefix, "head"), out),
            Decoder::Cup { blocks, head } => {
                blocks.visit_mut(&join(prefix, "blocks"), out);
                head.visit_mut(&join(prefix, "head"), out);
            }
        }
    }
}

impl<T: Scalar> Decoder<T> {
    pub fn new(init: &mut Initializer, cfg: &ModelConfig) -> Self {
        match cfg.decoder {
            DecoderKind::Naive => Decoder::Naive {
                head: Conv::new(init, cfg.hidden, cfg.num_classes, 1, 1, true),
            },
            DecoderKind::Cup => {
                let n = cfg.cup_blocks();
                let mut c_prev = cfg.hidden;
                let blocks = (0..n)
                    .map(|j| {
                        let exponent = (n - 1 - j) as u32;
                        let skip_channels = if cfg.encoder == EncoderKind::Hybrid && receives_skip(cfg.skip_count, exponent) {
                            cfg.backbone_widths[exponent as usize - 1]
                        } else {
                            0
                        };
                        let width = cfg.decoder_widths[j];
                        let block = CupBlock {
                            conv: Conv::new(init, c_prev + skip_channels, width, 3, 1, false),
                            norm: GroupNorm::new(width, cfg.norm_groups),
                            skip_channels,
                            exponent,
                        };
                        c_prev = width;
                        block
                    })
                    .collect();
                Decoder::Cup {
                    blocks,
                    head: Conv::new(init, c_prev, cfg.num_classes, 1, 1, true),
                }
            }
        }
    }

    /// `reshape_hidden → 1×1 conv to K → bilinear upsample to H×W`.
    pub fn naive_head<'a>(
        head: &'a Conv<T>,
        tape: &mut Tape<'a, T>,
        z: Var,
        grid: (usize, usize),
        out: (usize, usize),
    ) -> Result<Var> {
        let g = reshape_hidden(tape, z, grid)?;
        let logits = head.forward(tape, g)?;
        tape.upsample_bilinear(logits, out.0, out.1)
    }

    /// Runs the cascade; `skips` are the encoder taps at 1/2, 1/4, 1/8.
    pub fn cup_decode<'a>(
        blocks: &'a [CupBlock<T>],
        head: &'a Conv<T>,
        tape: &mut Tape<'a, T>,
        z: Var,
        grid: (usize, usize),
        skips: Option<[Var; 3]>,
    ) -> Result<Var> {
        let mut h = reshape_hidden(tape, z, grid)?;
        for block in blocks {
            let skip = if block.skip_channels > 0 {
                let taps = skips.ok_or_else(|| {
                    config_err!("missing skip-connection at 1/{} scale", 1usize << block.exponent)
                })?;
                Some(taps[block.exponent as usize - 1])
            } else {
                None
            };
            h = block.forward(tape, h, skip)?;
        }
        head.forward(tape, h)
    }

    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        z: Var,
        grid: (usize, usize),
        out: (usize, usize),
        skips: Option<[Var; 3]>,
    ) -> Result<Var> {
        match self {
            Decoder::Naive { head } => Self::naive_head(head, tape, z, grid, out),
            Decoder::Cup { blocks, head } => Self::cup_decode(blocks, head, tape, z, grid, skips),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skip_placement_rules() {
        assert!((1..=3).all(|e| receives_skip(3, e)));
        assert!(!receives_skip(3, 0));
        assert!(receives_skip(1, 2));
        assert!(!receives_skip(1, 1) && !receives_skip(1, 3));
        assert!(!(0..5).any(|e| receives_skip(0, e)));
    }
}
