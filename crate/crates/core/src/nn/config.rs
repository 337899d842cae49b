use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderKind {
    /// Patches cut straight from the image.
    Vit,
    /// CNN feature extractor, 1×1 patches from its 1/16 map.
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecoderKind {
    /// 1×1 conv to K classes, then one bilinear upsample to full size.
    Naive,
    /// Cascaded upsampler.
    Cup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalePreset {
    Tiny,
    Base,
    Large,
    Custom,
}

/// The four architecture rows compared in the encoder/decoder study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    VitNone,
    VitCup,
    HybridCup,
    TransUnet,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::VitNone, Variant::VitCup, Variant::HybridCup, Variant::TransUnet];

    pub fn parts(self) -> (EncoderKind, DecoderKind, usize) {
        match self {
            Variant::VitNone => (EncoderKind::Vit, DecoderKind::Naive, 0),
            Variant::VitCup => (EncoderKind::Vit, DecoderKind::Cup, 0),
            Variant::HybridCup => (EncoderKind::Hybrid, DecoderKind::Cup, 0),
            Variant::TransUnet => (EncoderKind::Hybrid, DecoderKind::Cup, 3),
        }
    }
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $kw:literal),* $(,)? }) => {
        impl $ty {
            pub fn keyword(self) -> &'static str {
                match self { $($ty::$variant => $kw),* }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.keyword())
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($kw => Ok($ty::$variant),)*
                    other => Err(config_err!(
                        "unknown {} '{}' (expected one of: {})",
                        stringify!($ty),
                        other,
                        [$($kw),*].join(", ")
                    )),
                }
            }
        }
    };
}

keyword_enum!(EncoderKind { Vit => "vit", Hybrid => "hybrid" });
keyword_enum!(DecoderKind { Naive => "none", Cup => "cup" });
keyword_enum!(ScalePreset { Tiny => "tiny", Base => "base", Large => "large", Custom => "custom" });
keyword_enum!(Variant {
    VitNone => "vit-none",
    VitCup => "vit-cup",
    HybridCup => "r50-vit-cup",
    TransUnet => "transunet",
});

/// Full architecture description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub decoder: DecoderKind,
    /// Skip-connections into the cascaded upsampler: 0, 1 (1/4 scale only) or 3.
    pub skip_count: usize,
    pub patch_size: usize,
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub num_classes: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    /// Stem and three stage widths of the hybrid CNN (1/2 … 1/16).
    pub backbone_widths: [usize; 4],
    /// One width per cascaded-upsampler block, coarsest first.
    pub decoder_widths: Vec<usize>,
    pub norm_groups: usize,
    pub scale: ScalePreset,
}

/// Hybrid backbone reduction factor.
pub const BACKBONE_STRIDE: usize = 16;

/// Default upsampler widths for `blocks` blocks, ending at full resolution.
pub fn default_decoder_widths(blocks: usize) -> Vec<usize> {
    // Output scale 1/1 → 16, 1/2 → 64, 1/4 → 128, 1/8 → 256, coarser doubles.
    let width_at = |e: u32| match e {
        0 => 16,
        1 => 64,
        2 => 128,
        e => 256 << (e - 3),
    };
    (0..blocks as u32).rev().map(width_at).collect()
}

/// Preset widths: Tiny halves every block except the full-resolution one.
pub fn preset_decoder_widths(scale: ScalePreset, blocks: usize) -> Vec<usize> {
    let mut widths = default_decoder_widths(blocks);
    if scale == ScalePreset::Tiny {
        let n = widths.len();
        for w in widths.iter_mut().take(n.saturating_sub(1)) {
            *w /= 2;
        }
    }
    widths
}

impl ModelConfig {
    fn scaled(scale: ScalePreset, hidden: usize, layers: usize, mlp_dim: usize, heads: usize) -> Self {
        Self {
            encoder: EncoderKind::Hybrid,
            decoder: DecoderKind::Cup,
            skip_count: 3,
            patch_size: 16,
            height: 224,
            width: 224,
            in_channels: 1,
            num_classes: 9,
            hidden,
            layers,
            heads,
            mlp_dim,
            backbone_widths: [16, 32, 64, 128],
            decoder_widths: preset_decoder_widths(scale, 4),
            norm_groups: 8,
            scale,
        }
    }

    /// Desk-scale preset: D=64, L=2, 4 heads, MLP 128 on 64×64 inputs with 4 classes.
    pub fn tiny() -> Self {
        Self {
            height: 64,
            width: 64,
            num_classes: 4,
            ..Self::scaled(ScalePreset::Tiny, 64, 2, 128, 4)
        }
    }

    /// ViT-Base sizing: D=768, L=12, MLP 3072, 12 heads.
    pub fn base() -> Self {
        Self::scaled(ScalePreset::Base, 768, 12, 3072, 12)
    }

    /// ViT-Large sizing: D=1024, L=24, MLP 4096, 16 heads.
    pub fn large() -> Self {
        Self::scaled(ScalePreset::Large, 1024, 24, 4096, 16)
    }

    pub fn preset(scale: ScalePreset) -> Self {
        match scale {
            ScalePreset::Tiny | ScalePreset::Custom => Self::tiny(),
            ScalePreset::Base => Self::base(),
            ScalePreset::Large => Self::large(),
        }
    }

    /// Switches the transformer sizing to a preset, keeping everything else.
    pub fn apply_scale(&mut self, scale: ScalePreset) {
        if scale != ScalePreset::Custom {
            let p = Self::preset(scale);
            self.hidden = p.hidden;
            self.layers = p.layers;
            self.heads = p.heads;
            self.mlp_dim = p.mlp_dim;
            let n = self.decoder_widths.len();
            if self.decoder_widths == preset_decoder_widths(self.scale, n) {
                self.decoder_widths = preset_decoder_widths(scale, n);
            }
        }
        self.scale = scale;
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.apply_variant(variant);
        self
    }

    pub fn apply_variant(&mut self, variant: Variant) {
        let (encoder, decoder, skips) = variant.parts();
        self.encoder = encoder;
        self.decoder = decoder;
        self.skip_count = skips;
        if encoder == EncoderKind::Hybrid {
            self.patch_size = BACKBONE_STRIDE;
        }
        self.decoder_widths = preset_decoder_widths(self.scale, self.cup_blocks_for_patch());
    }

    /// Variant row this configuration corresponds to, if any.
    pub fn variant(&self) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.parts() == (self.encoder, self.decoder, self.skip_count))
    }

    /// Token grid `(H/P, W/P)`.
    pub fn token_grid(&self) -> (usize, usize) {
        (self.height / self.patch_size, self.width / self.patch_size)
    }

    /// Sequence length `N = HW / P²`.
    pub fn seq_len(&self) -> usize {
        let (h, w) = self.token_grid();
        h * w
    }

    /// Width of a flattened patch entering the projection.
    pub fn patch_dim(&self) -> usize {
        match self.encoder {
            EncoderKind::Vit => self.patch_size * self.patch_size * self.in_channels,
            EncoderKind::Hybrid => self.backbone_widths[3],
        }
    }

    fn cup_blocks_for_patch(&self) -> usize {
        if self.patch_size.is_power_of_two() {
            self.patch_size.trailing_zeros() as usize
        } else {
            0
        }
    }

    /// Number of 2× upsampling blocks needed to return from the token grid.
    pub fn cup_blocks(&self) -> usize {
        match self.decoder {
            DecoderKind::Naive => 0,
            DecoderKind::Cup => self.cup_blocks_for_patch(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| Err(config_err!("model.{name}: {msg}"));
        if self.patch_size == 0 {
            return field("patch_size", "must be positive".into());
        }
        if self.height == 0 || self.width == 0 || self.height % self.patch_size != 0 || self.width % self.patch_size != 0 {
            return field(
                "patch_size",
                format!(
                    "input {}x{} is not divisible by patch size {}",
                    self.height, self.width, self.patch_size
                ),
            );
        }
        if self.in_channels == 0 {
            return field("in_channels", "must be positive".into());
        }
        if !(2..=256).contains(&self.num_classes) {
            return field("classes", format!("{} outside 2..=256", self.num_classes));
        }
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return field(
                "heads",
                format!("hidden size {} not divisible into {} heads", self.hidden, self.heads),
            );
        }
        if self.mlp_dim == 0 {
            return field("mlp_dim", "must be positive".into());
        }
        if self.norm_groups == 0 {
            return field("norm_groups", "must be positive".into());
        }
        if !matches!(self.skip_count, 0 | 1 | 3) {
            return field("skips", format!("{} not in {{0, 1, 3}}", self.skip_count));
        }
        if self.encoder == EncoderKind::Hybrid {
            if self.patch_size != BACKBONE_STRIDE {
                return field(
                    "patch_size",
                    format!("hybrid encoder fixes the token grid at 1/{BACKBONE_STRIDE}; got patch size {}", self.patch_size),
                );
            }
            if self.backbone_widths.contains(&0) {
                return field("backbone_widths", "widths must be positive".into());
            }
        }
        if self.skip_count > 0 && (self.encoder != EncoderKind::Hybrid || self.decoder != DecoderKind::Cup) {
            return field(
                "skips",
                "skip-connections need the hybrid encoder and the cascaded upsampler".into(),
            );
        }
        if self.decoder == DecoderKind::Cup {
            if !self.patch_size.is_power_of_two() || self.patch_size < 2 {
                return field(
                    "patch_size",
                    format!("cascaded upsampler needs a power-of-two patch size, got {}", self.patch_size),
                );
            }
            if self.decoder_widths.len() != self.cup_blocks() {
                return field(
                    "decoder_widths",
                    format!(
                        "{} widths given for {} upsampling blocks",
                        self.decoder_widths.len(),
                        self.cup_blocks()
                    ),
                );
            }
            if self.decoder_widths.contains(&0) {
                return field("decoder_widths", "widths must be positive".into());
            }
        }
        Ok(())
    }

    /// Applies one `model.*` setting (the `model.` prefix is optional).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.strip_prefix("model.").unwrap_or(key);
        let value = value.trim();
        let num = |v: &str| -> Result<usize> {
            v.parse::<usize>()
                .map_err(|_| config_err!("model.{key}: expected a non-negative integer, got '{v}'"))
        };
        let list = |v: &str| -> Result<Vec<usize>> {
            v.split(',').filter(|s| !s.trim().is_empty()).map(|s| num(s.trim())).collect()
        };
        match key {
            "variant" => self.apply_variant(value.parse()?),
            "scale" => self.apply_scale(value.parse()?),
            "encoder" => self.encoder = value.parse()?,
            "decoder" => self.decoder = value.parse()?,
            "skips" => self.skip_count = num(value)?,
            "patch_size" => {
                self.patch_size = num(value)?;
                if self.decoder == DecoderKind::Cup && self.decoder_widths.len() != self.cup_blocks() {
                    self.decoder_widths = preset_decoder_widths(self.scale, self.cup_blocks());
                }
            }
            "resolution" => {
                let r = num(value)?;
                self.height = r;
                self.width = r;
            }
            "height" => self.height = num(value)?,
            "width" => self.width = num(value)?,
            "in_channels" => self.in_channels = num(value)?,
            "classes" => self.num_classes = num(value)?,
            "hidden" => {
                self.hidden = num(value)?;
                self.scale = ScalePreset::Custom;
            }
            "layers" => {
                self.layers = num(value)?;
                self.scale = ScalePreset::Custom;
            }
            "heads" => {
                self.heads = num(value)?;
                self.scale = ScalePreset::Custom;
            }
            "mlp_dim" => {
                self.mlp_dim = num(value)?;
                self.scale = ScalePreset::Custom;
            }
            "backbone_widths" => {
                let v = list(value)?;
                self.backbone_widths = v
                    .try_into()
                    .map_err(|_| config_err!("model.backbone_widths: expected exactly 4 widths"))?;
            }
            "decoder_widths" => self.decoder_widths = list(value)?,
            "norm_groups" => self.norm_groups = num(value)?,
            other => return Err(config_err!("unknown setting 'model.{other}'")),
        }
        Ok(())
    }

    /// Canonical `model.*` key/value listing; replaying it through [`set`](Self::set)
    /// on any config reproduces this one.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let pairs = vec![
            ("encoder", self.encoder.to_string()),
            ("decoder", self.decoder.to_string()),
            ("skips", self.skip_count.to_string()),
            ("patch_size", self.patch_size.to_string()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("in_channels", self.in_channels.to_string()),
            ("classes", self.num_classes.to_string()),
            ("hidden", self.hidden.to_string()),
            ("layers", self.layers.to_string()),
            ("heads", self.heads.to_string()),
            ("mlp_dim", self.mlp_dim.to_string()),
            ("backbone_widths", join(&self.backbone_widths)),
            ("decoder_widths", join(&self.decoder_widths)),
            ("norm_groups", self.norm_groups.to_string()),
            ("scale", self.scale.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (format!("model.{k}"), v)).collect()
    }

    pub fn from_pairs<'k>(pairs: impl IntoIterator<Item = (&'k str, &'k str)>) -> Result<Self> {
        let mut cfg = Self::tiny();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}
