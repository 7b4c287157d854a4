//! Point-prompt encoder: normalization, Gaussian Fourier features and a
//! learned point embedding, plus per-level projections to pyramid widths.

use super::config::{Dims, ModelConfig, LEVELS};
use crate::error::{Error, Result};
use crate::nn::{Builder, Linear};
use crate::params::{init, ParamId, ParamKind, ParamStore};
use crate::tensor::{Graph, Tensor, Var};

/// Standard deviation of the frozen Gaussian projection.
pub const PHI_SCALE: f32 = 1.0;

/// Divide `(x, y, z)` voxel coordinates by `(W, H, D)`. Points must lie in
/// `[0, W) × [0, H) × [0, D)`.
pub fn normalize_points(points: &[[f32; 3]], dims: Dims) -> Result<Vec<[f32; 3]>> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("empty prompt set".into()));
    }
    points
        .iter()
        .map(|&p| {
            if !dims.contains(p) {
                return Err(Error::InvalidArgument(format!("prompt point {p:?} outside volume {dims}")));
            }
            Ok([p[0] / dims.w as f32, p[1] / dims.h as f32, p[2] / dims.d as f32])
        })
        .collect()
}

/// Prompt embeddings `E` and their Fourier component `PE`, both `[N, 2d]`.
#[derive(Clone, Copy, Debug)]
pub struct PromptEmbedding {
    pub embeddings: Var,
    pub pe: Var,
}

#[derive(Clone, Debug)]
pub struct PromptEncoder {
    pub phi: ParamId,
    pub w_point: ParamId,
    /// Learned embedding of the padding token appended to every prompt set.
    pub pad: ParamId,
    pub proj: Vec<Linear>,
    dim: usize,
}

impl PromptEncoder {
    pub fn new(b: &mut Builder, config: &ModelConfig) -> Result<Self> {
        let d = config.prompt_dim;
        let phi = init::normal(vec![3, d], PHI_SCALE, b.rng);
        let w_point = init::normal(vec![2 * d], 1.0, b.rng);
        let pad = init::normal(vec![2 * d], 1.0, b.rng);
        Ok(Self {
            phi: b.add("prompt.phi", phi, ParamKind::Frozen)?,
            w_point: b.add("prompt.w_point", w_point, ParamKind::Trainable)?,
            pad: b.add("prompt.pad", pad, ParamKind::Trainable)?,
            proj: (0..LEVELS)
                .map(|l| Linear::new(b, &format!("prompt.proj{l}"), 2 * d, config.level_channels(l), true))
                .collect::<Result<_>>()?,
            dim: d,
        })
    }

    /// `e = 2π·p̃Φ`, `PE = [sin e, cos e]`, `E = W_point + PE` for normalized points.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, normalized: &[[f32; 3]]) -> Result<PromptEmbedding> {
        let n = normalized.len();
        let p = g.constant(Tensor::new(vec![n, 3], normalized.iter().flatten().copied().collect())?);
        let phi = g.param(store, self.phi);
        let e = g.matmul(p, phi)?;
        let e = g.scale(e, std::f32::consts::TAU)?;
        let (s, c) = (g.sin(e)?, g.cos(e)?);
        let pe = g.concat(&[s, c], 1)?;
        let w = g.param(store, self.w_point);
        let embeddings = g.add_row_bias(pe, w)?;
        Ok(PromptEmbedding { embeddings, pe })
    }

    /// Append the padding token (learned embedding, zero positional part).
    pub fn with_padding(&self, g: &mut Graph, store: &ParamStore, prompts: PromptEmbedding) -> Result<PromptEmbedding> {
        let pad = g.param(store, self.pad);
        let pad = g.reshape(pad, &[1, 2 * self.dim])?;
        let zero = g.constant(Tensor::zeros(vec![1, 2 * self.dim]));
        Ok(PromptEmbedding { embeddings: g.concat(&[prompts.embeddings, pad], 0)?, pe: g.concat(&[prompts.pe, zero], 0)? })
    }

    /// Linear map from `2d` to the channel width of `level`.
    pub fn project(&self, g: &mut Graph, store: &ParamStore, x: Var, level: usize) -> Result<Var> {
        let proj = self.proj.get(level).ok_or_else(|| Error::InvalidArgument(format!("pyramid level {level} out of range")))?;
        proj.forward(g, store, x)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        let dims = Dims::new(256, 256, 16);
        assert_eq!(normalize_points(&[[128.0, 128.0, 8.0]], dims).unwrap(), [[0.5, 0.5, 0.5]]);
        assert_eq!(normalize_points(&[[0.0; 3]], dims).unwrap(), [[0.0; 3]]);
        assert!(normalize_points(&[[256.0, 0.0, 0.0]], dims).is_err());
        assert!(normalize_points(&[[-0.5, 0.0, 0.0]], dims).is_err());
        assert!(normalize_points(&[], dims).is_err());
    }
}
