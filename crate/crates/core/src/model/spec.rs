use std::fmt;
use std::str::FromStr;

use crate::config::KeyValues;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Three conv blocks and a dense head.
    Baseline,
    /// Motion channel, ConvLSTM, general attention.
    M1,
    /// Layer-specific attention, BiConvLSTM, general attention.
    M2,
    /// As M2 with a unidirectional ConvLSTM.
    M3,
    /// Baseline with self-attention after the third block.
    M4,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Baseline, Variant::M1, Variant::M2, Variant::M3, Variant::M4];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::M1 => "m1",
            Variant::M2 => "m2",
            Variant::M3 => "m3",
            Variant::M4 => "m4",
        }
    }

    pub fn uses_motion(self) -> bool {
        self == Variant::M1
    }

    pub fn is_recurrent(self) -> bool {
        matches!(self, Variant::M1 | Variant::M2 | Variant::M3)
    }

    pub fn has_layer_attention(self) -> bool {
        matches!(self, Variant::M2 | Variant::M3)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidSpec(format!("unknown variant {s:?} (baseline, m1, m2, m3, m4)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scale {
    /// 256×256 input, widths 32/64/128.
    Paper,
    /// 32×32 input, widths 8/16/32; same topology at a fraction of the cost.
    Desk,
}

impl Scale {
    pub fn name(self) -> &'static str {
        match self {
            Scale::Paper => "paper",
            Scale::Desk => "desk",
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(Scale::Paper),
            "desk" => Ok(Scale::Desk),
            _ => Err(Error::InvalidSpec(format!("unknown scale {s:?} (paper, desk)"))),
        }
    }
}

/// Architecture hyperparameters. Everything that changes the parameter
/// layout or the forward function lives here and feeds the spec hash.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub variant: Variant,
    pub scale: Scale,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub widths: [usize; 3],
    pub recurrent_filters: usize,
    pub recurrent_kernel: usize,
    pub reduction_ratio: usize,
    pub heads: usize,
    pub key_dim: usize,
    pub dense_units: usize,
    pub conv_dropout: f64,
    pub dense_dropout: f64,
}

/// Number of 2× spatial poolings in the conv stack.
pub const POOL_ROUNDS: u32 = 3;

impl ModelSpec {
    pub fn new(variant: Variant, scale: Scale) -> Self {
        let (extent, widths, filters, key_dim) = match scale {
            Scale::Paper => (256, [32, 64, 128], 64, 128),
            Scale::Desk => (32, [8, 16, 32], 16, 16),
        };
        Self {
            variant,
            scale,
            frames: 10,
            height: extent,
            width: extent,
            in_channels: if variant.uses_motion() { 2 } else { 1 },
            widths,
            recurrent_filters: filters,
            recurrent_kernel: 3,
            reduction_ratio: 32,
            heads: 2,
            key_dim,
            dense_units: 64,
            conv_dropout: 0.25,
            dense_dropout: 0.5,
        }
    }

    pub fn paper(variant: Variant) -> Self {
        Self::new(variant, Scale::Paper)
    }

    pub fn desk(variant: Variant) -> Self {
        Self::new(variant, Scale::Desk)
    }

    /// Builder-style frame count override.
    pub fn with_frames(mut self, frames: usize) -> Self {
        self.frames = frames;
        self
    }

    /// Builder-style spatial extent override.
    pub fn with_size(mut self, height: usize, width: usize) -> Self {
        self.height = height;
        self.width = width;
        self
    }

    /// `(T, H, W, Cin)` of one sample.
    pub fn input_extents(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.in_channels]
    }

    /// Channels entering the classifier head after pooling.
    pub fn head_channels(&self) -> usize {
        match self.variant {
            Variant::Baseline | Variant::M4 => self.widths[2],
            Variant::M1 | Variant::M3 => self.recurrent_filters,
            Variant::M2 => 2 * self.recurrent_filters,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        let want_cin = if self.variant.uses_motion() { 2 } else { 1 };
        if self.in_channels != want_cin {
            return bad(format!(
                "variant {} takes {} input channel(s), spec has {} (the motion channel is M1-only)",
                self.variant, want_cin, self.in_channels
            ));
        }
        if self.frames == 0 || self.widths.contains(&0) || self.dense_units == 0 {
            return bad("frames, widths and dense_units must be positive".into());
        }
        let div = 1usize << POOL_ROUNDS;
        if !self.height.is_multiple_of(div) || !self.width.is_multiple_of(div) || self.height < div || self.width < div {
            return bad(format!(
                "input {}x{} must be a positive multiple of {div} for three 2x poolings",
                self.height, self.width
            ));
        }
        if self.variant.is_recurrent() && (self.recurrent_filters == 0 || self.recurrent_kernel.is_multiple_of(2)) {
            return bad("recurrent filters must be positive and the kernel odd".into());
        }
        if self.variant.has_layer_attention()
            && (self.reduction_ratio == 0 || !self.widths[2].is_multiple_of(self.reduction_ratio))
        {
            return bad(format!(
                "reduction ratio {} must divide the third block width {}",
                self.reduction_ratio, self.widths[2]
            ));
        }
        if self.variant == Variant::M4 && (self.heads == 0 || self.key_dim == 0) {
            return bad("self-attention heads and key_dim must be positive".into());
        }
        for (name, rate) in [("conv_dropout", self.conv_dropout), ("dense_dropout", self.dense_dropout)] {
            if !(0.0..1.0).contains(&rate) {
                return bad(format!("{name} must lie in [0, 1), got {rate}"));
            }
        }
        Ok(())
    }

    /// Canonical `key=value` lines in a fixed order; the input to
    /// [`spec_hash`](Self::spec_hash) and the `model.*` section of resolved
    /// configs.
    pub fn to_config(&self) -> String {
        let [w1, w2, w3] = self.widths;
        [
            format!("model.variant={}", self.variant),
            format!("model.scale={}", self.scale),
            format!("model.frames={}", self.frames),
            format!("model.height={}", self.height),
            format!("model.width={}", self.width),
            format!("model.in_channels={}", self.in_channels),
            format!("model.widths={w1},{w2},{w3}"),
            format!("model.recurrent_filters={}", self.recurrent_filters),
            format!("model.recurrent_kernel={}", self.recurrent_kernel),
            format!("model.reduction_ratio={}", self.reduction_ratio),
            format!("model.heads={}", self.heads),
            format!("model.key_dim={}", self.key_dim),
            format!("model.dense_units={}", self.dense_units),
            format!("model.conv_dropout={}", self.conv_dropout),
            format!("model.dense_dropout={}", self.dense_dropout),
        ]
        .iter()
        .map(|l| format!("{l}\n"))
        .collect()
    }

    /// 64-bit FNV-1a of the canonical serialization.
    pub fn spec_hash(&self) -> u64 {
        fnv1a64(self.to_config().as_bytes())
    }

    /// Build from `model.*` keys. `model.variant` and `model.scale` pick the
    /// preset; remaining keys override it. Unknown `model.*` keys are errors.
    pub fn from_config(kv: &KeyValues) -> Result<Self> {
        let variant: Variant = kv.get("model.variant").unwrap_or("baseline").parse()?;
        let scale: Scale = kv.get("model.scale").unwrap_or("desk").parse()?;
        let mut spec = ModelSpec::new(variant, scale);
        for (key, value) in kv.iter() {
            let Some(field) = key.strip_prefix("model.") else {
                continue;
            };
            spec.set(field, value)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    fn set(&mut self, field: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<usize> {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidSpec(format!("model.{field}: expected an integer, got {v:?}")))
        };
        let real = |v: &str| -> Result<f64> {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidSpec(format!("model.{field}: expected a number, got {v:?}")))
        };
        match field {
            "variant" => self.variant = value.parse()?,
            "scale" => self.scale = value.parse()?,
            "frames" => self.frames = num(value)?,
            "height" => self.height = num(value)?,
            "width" => self.width = num(value)?,
            "in_channels" => self.in_channels = num(value)?,
            "widths" => {
                let parts: Vec<usize> = value.split(',').map(num).collect::<Result<_>>()?;
                self.widths = parts.try_into().map_err(|_| {
                    Error::InvalidSpec(format!("model.widths: expected three comma-separated values, got {value:?}"))
                })?;
            }
            "recurrent_filters" => self.recurrent_filters = num(value)?,
            "recurrent_kernel" => self.recurrent_kernel = num(value)?,
            "reduction_ratio" => self.reduction_ratio = num(value)?,
            "heads" => self.heads = num(value)?,
            "key_dim" => self.key_dim = num(value)?,
            "dense_units" => self.dense_units = num(value)?,
            "conv_dropout" => self.conv_dropout = real(value)?,
            "dense_dropout" => self.dense_dropout = real(value)?,
            other => return Err(Error::InvalidSpec(format!("unknown key model.{other}"))),
        }
        Ok(())
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
