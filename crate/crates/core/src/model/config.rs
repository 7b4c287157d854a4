use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::tensor::Triple;

/// Model size. `Tiny` is the desk-scale variant; S, M and L follow the
/// published embedding widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Tiny,
    S,
    M,
    L,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Tiny, Variant::S, Variant::M, Variant::L];

    pub fn embed_dim(self) -> usize {
        match self {
            Variant::Tiny => 16,
            Variant::S => 32,
            Variant::M => 64,
            Variant::L => 128,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tiny => "tiny",
            Variant::S => "s",
            Variant::M => "m",
            Variant::L => "l",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "tiny" => Ok(Variant::Tiny),
            "s" => Ok(Variant::S),
            "m" => Ok(Variant::M),
            "l" => Ok(Variant::L),
            other => Err(format!("unknown variant `{other}` (expected tiny, s, m or l)")),
        }
    }
}

/// Extents in voxels, named by axis. Tensors are stored `[C, D, H, W]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub w: usize,
    pub h: usize,
    pub d: usize,
}

impl Dims {
    pub const fn new(w: usize, h: usize, d: usize) -> Self {
        Self { w, h, d }
    }

    /// `[d, h, w]`, the tensor axis order.
    pub fn dhw(self) -> Triple {
        [self.d, self.h, self.w]
    }

    pub fn from_dhw([d, h, w]: Triple) -> Self {
        Self { w, h, d }
    }

    pub fn voxels(self) -> usize {
        self.w * self.h * self.d
    }

    pub fn contains(self, p: [f32; 3]) -> bool {
        let ext = [self.w, self.h, self.d];
        p.iter().zip(ext).all(|(&c, e)| c >= 0.0 && c < e as f32)
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.w, self.h, self.d)
    }
}

/// Number of patch-merge steps; each halves every grid axis.
pub const MERGES: usize = 3;
/// Pyramid levels: the patch grid plus one per merge.
pub const LEVELS: usize = MERGES + 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub embed_dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub patch: Dims,
    pub mlp_ratio: usize,
    pub input_dims: Dims,
    pub dropout: f32,
    /// Width `d` of the prompt Fourier features (embeddings are `2d` wide).
    pub prompt_dim: usize,
    /// Hidden-width multiplier of the MLP inside each cross-attention skip.
    pub skip_mlp_ratio: usize,
}

impl ModelConfig {
    pub fn new(variant: Variant, input_dims: Dims) -> Result<Self> {
        let cfg = Self {
            variant,
            embed_dim: variant.embed_dim(),
            heads: 8,
            blocks: 6,
            patch: Dims::new(8, 8, 2),
            mlp_ratio: 8,
            input_dims,
            dropout: 0.1,
            prompt_dim: 64,
            skip_mlp_ratio: 2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Desk-scale default: Tiny on 64×64×16.
    pub fn tiny() -> Self {
        Self::new(Variant::Tiny, Dims::new(64, 64, 16)).expect("valid default")
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.embed_dim;
        if self.heads == 0 || !e.is_multiple_of(self.heads) {
            return Err(config_err("embed_dim", format!("{e} is not divisible by {} heads", self.heads)));
        }
        if e < 8 || !e.is_multiple_of(2) {
            return Err(config_err("embed_dim", format!("{e} must be even and at least 8")));
        }
        if self.blocks <= MERGES {
            return Err(config_err("blocks", format!("need more than {MERGES} blocks, got {}", self.blocks)));
        }
        if self.mlp_ratio == 0 || self.skip_mlp_ratio == 0 {
            return Err(config_err("mlp_ratio", "must be positive"));
        }
        if self.prompt_dim == 0 {
            return Err(config_err("prompt_dim", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err("dropout", format!("{} outside [0, 1)", self.dropout)));
        }
        let step = 1 << MERGES;
        for (axis, n, p) in
            [("w", self.input_dims.w, self.patch.w), ("h", self.input_dims.h, self.patch.h), ("d", self.input_dims.d, self.patch.d)]
        {
            if p == 0 || n == 0 || n % (p * step) != 0 {
                return Err(config_err("input_dims", format!("{axis} = {n} must be a positive multiple of patch {p} x {step}")));
            }
        }
        Ok(())
    }

    /// Patch grid `[d, h, w]`.
    pub fn grid(&self) -> Triple {
        let [d, h, w] = self.input_dims.dhw();
        let [pd, ph, pw] = self.patch.dhw();
        [d / pd, h / ph, w / pw]
    }

    /// Grid `[d, h, w]` of pyramid level `l`.
    pub fn level_grid(&self, level: usize) -> Triple {
        self.grid().map(|g| g >> level)
    }

    pub fn level_channels(&self, level: usize) -> usize {
        self.embed_dim << level
    }

    /// Transformer width of block `i` (0-based): blocks after the last merge
    /// stay at the deepest width.
    pub fn block_channels(&self, block: usize) -> usize {
        self.level_channels(block.min(MERGES))
    }

    pub fn with_input_dims(&self, input_dims: Dims) -> Result<Self> {
        let cfg = Self { input_dims, ..self.clone() };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_widths() {
        let widths: Vec<_> = Variant::ALL.iter().map(|v| v.embed_dim()).collect();
        assert_eq!(widths, [16, 32, 64, 128]);
        assert_eq!("M".parse::<Variant>().unwrap(), Variant::M);
        assert!("xl".parse::<Variant>().is_err());
    }

    #[test]
    fn grids() {
        let cfg = ModelConfig::new(Variant::L, Dims::new(256, 256, 16)).unwrap();
        assert_eq!(cfg.grid(), [8, 32, 32]);
        assert_eq!(cfg.level_grid(3), [1, 4, 4]);
        assert_eq!(ModelConfig::tiny().grid(), [8, 8, 8]);
    }

    #[test]
    fn rejects_indivisible_dims() {
        let err = ModelConfig::new(Variant::Tiny, Dims::new(64, 64, 8)).unwrap_err();
        assert!(err.to_string().contains("input_dims"), "{err}");
        assert!(ModelConfig::new(Variant::Tiny, Dims::new(96, 64, 16)).is_err());
    }

    #[test]
    fn rejects_bad_heads() {
        let mut cfg = ModelConfig::tiny();
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
    }
}
