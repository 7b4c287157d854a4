//! Hierarchical vision-transformer encoder.
//!
//! Tokens are kept as `[N, C]` matrices whose rows run over the patch grid in
//! `(d, h, w)` row-major order, matching the `[C, D, H, W]` volume layout.

use std::sync::Arc;

use super::config::{ModelConfig, LEVELS, MERGES};
use crate::error::{shape_err, Result};
use crate::nn::{Builder, Conv3d, LayerNorm, Linear, Mlp, MultiHeadAttention};
use crate::params::ParamStore;
use crate::tensor::{Conv3dSpec, Graph, Tensor, Triple, Var};

/// Fixed 3D sinusoidal embedding, `[d·h·w, dim]` in token order.
///
/// The channels are split into three equal even-width groups for the w, h
/// and d coordinates. Inside a group, channel pair `k` holds
/// `sin(x·ω_k), cos(x·ω_k)` with `ω_k = 10000^(-2k/g)`. Channels left over
/// when `dim` is not a multiple of 6 are zero.
pub fn sinusoidal_pe_3d(grid: Triple, dim: usize) -> Result<Tensor> {
    if dim < 6 {
        return Err(shape_err("sinusoidal_pe_3d", format!("dim {dim} < 6")));
    }
    if grid.contains(&0) {
        return Err(shape_err("sinusoidal_pe_3d", format!("empty grid {grid:?}")));
    }
    let group = dim / 6 * 2;
    let freqs: Vec<f64> = (0..group / 2).map(|k| 10000f64.powf(-((2 * k) as f64) / group as f64)).collect();
    let [gd, gh, gw] = grid;
    let mut out = vec![0.0f32; gd * gh * gw * dim];
    for (n, row) in out.chunks_mut(dim).enumerate() {
        let (z, y, x) = (n / (gh * gw), n / gw % gh, n % gw);
        for (axis, pos) in [x, y, z].into_iter().enumerate() {
            let base = axis * group;
            for (k, w) in freqs.iter().enumerate() {
                let a = pos as f64 * w;
                row[base + 2 * k] = a.sin() as f32;
                row[base + 2 * k + 1] = a.cos() as f32;
            }
        }
    }
    Ok(Tensor::from_parts(vec![gd * gh * gw, dim], out))
}

/// Row order that groups each 2×2×2 neighbourhood of a `[d, h, w]` grid.
///
/// Output rows run over the merged grid in token order; inside a
/// neighbourhood the 8 offsets are enumerated with w outermost, then h, then d.
pub fn merge_index(grid: Triple) -> Result<Vec<usize>> {
    if grid.iter().any(|&g| g % 2 != 0) {
        return Err(shape_err("patch_merge", format!("grid {grid:?} has an odd extent")));
    }
    let [gd, gh, gw] = grid;
    let mut idx = Vec::with_capacity(gd * gh * gw);
    for z in (0..gd).step_by(2) {
        for y in (0..gh).step_by(2) {
            for x in (0..gw).step_by(2) {
                for ox in 0..2 {
                    for oy in 0..2 {
                        for oz in 0..2 {
                            idx.push(((z + oz) * gh + (y + oy)) * gw + x + ox);
                        }
                    }
                }
            }
        }
    }
    Ok(idx)
}

/// `[N, C]` tokens on `grid` to a `[C, d, h, w]` volume.
pub fn tokens_to_volume(g: &mut Graph, tokens: Var, grid: Triple) -> Result<Var> {
    let c = g.shape(tokens)[1];
    let t = g.transpose(tokens)?;
    g.reshape(t, &[c, grid[0], grid[1], grid[2]])
}

/// `[C, d, h, w]` volume to `[d·h·w, C]` tokens.
pub fn volume_to_tokens(g: &mut Graph, volume: Var) -> Result<Var> {
    let s = g.shape(volume).to_vec();
    let flat = g.reshape(volume, &[s[0], s[1..].iter().product()])?;
    g.transpose(flat)
}

/// Pre-norm transformer block: `x + MHSA(LN(x))`, then `+ MLP(LN(·))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl TransformerBlock {
    pub fn new(b: &mut Builder, name: &str, dim: usize, heads: usize, mlp_ratio: usize) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(b, &format!("{name}.ln1"), dim)?,
            attn: MultiHeadAttention::new(b, &format!("{name}.attn"), dim, heads)?,
            ln2: LayerNorm::new(b, &format!("{name}.ln2"), dim)?,
            mlp: Mlp::new(b, &format!("{name}.mlp"), dim, dim * mlp_ratio)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.ln1.forward(g, store, x)?;
        let h = self.attn.forward(g, store, h, h, h)?;
        let x = g.add(x, h)?;
        let h = self.ln2.forward(g, store, x)?;
        let h = self.mlp.forward(g, store, h)?;
        g.add(x, h)
    }
}

/// 2×2×2 neighbourhood concat (8C), layer norm, bias-free projection to 2C.
#[derive(Clone, Debug)]
pub struct PatchMerge {
    pub norm: LayerNorm,
    pub reduction: Linear,
}

impl PatchMerge {
    pub fn new(b: &mut Builder, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(b, &format!("{name}.norm"), 8 * dim)?,
            reduction: Linear::new(b, &format!("{name}.reduction"), 8 * dim, 2 * dim, false)?,
        })
    }

    /// Merge tokens on `grid`; the caller adds the positional embedding of the new grid.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, tokens: Var, grid: Triple) -> Result<Var> {
        let [n, c] = g.shape(tokens)[..] else {
            return Err(shape_err("patch_merge", format!("tokens {:?}", g.shape(tokens))));
        };
        if n != grid.iter().product::<usize>() {
            return Err(shape_err("patch_merge", format!("{n} tokens for grid {grid:?}")));
        }
        let idx = merge_index(grid)?;
        let grouped = g.gather_rows(tokens, Arc::new(idx))?;
        let cat = g.reshape(grouped, &[n / 8, 8 * c])?;
        let h = self.norm.forward(g, store, cat)?;
        self.reduction.forward(g, store, h)
    }
}

/// Encoder outputs as token matrices, finest first.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub levels: [Var; LEVELS],
    pub grids: [Triple; LEVELS],
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub patch_embed: Conv3d,
    pub blocks: Vec<TransformerBlock>,
    pub merges: Vec<PatchMerge>,
    pe: Vec<Tensor>,
    config: ModelConfig,
}

impl Encoder {
    pub fn new(b: &mut Builder, config: &ModelConfig) -> Result<Self> {
        let patch = config.patch.dhw();
        let e = config.embed_dim;
        let patch_embed = Conv3d::new(b, "encoder.patch_embed", 1, e, patch, Conv3dSpec::new(patch, [0; 3]), true)?;
        let blocks = (0..config.blocks)
            .map(|i| {
                let c = config.block_channels(i);
                TransformerBlock::new(b, &format!("encoder.block{}", i + 1), c, config.heads, config.mlp_ratio)
            })
            .collect::<Result<_>>()?;
        let merges =
            (0..MERGES).map(|j| PatchMerge::new(b, &format!("encoder.merge{}", j + 1), config.level_channels(j))).collect::<Result<_>>()?;
        Ok(Self { patch_embed, blocks, merges, pe: level_pes(config)?, config: config.clone() })
    }

    /// Positional embedding of pyramid level `l`, `[N_l, C_l]`.
    pub fn level_pe(&self, level: usize) -> &Tensor {
        &self.pe[level]
    }

    /// Encode a `[1, D, H, W]` volume. Merges follow blocks 1..=3 and every
    /// level is tapped before its merge; the last level is the final block output.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, volume: Var) -> Result<FeaturePyramid> {
        let expect = [1, self.config.input_dims.d, self.config.input_dims.h, self.config.input_dims.w];
        if g.shape(volume) != expect {
            return Err(shape_err("encode", format!("volume {:?}, model expects {expect:?}", g.shape(volume))));
        }
        let x = self.patch_embed.forward(g, store, volume)?;
        let mut x = volume_to_tokens(g, x)?;
        let pe = g.constant(self.pe[0].clone());
        x = g.add(x, pe)?;
        let mut taps = Vec::with_capacity(LEVELS);
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(g, store, x)?;
            if i < MERGES {
                taps.push(x);
                x = self.merges[i].forward(g, store, x, self.config.level_grid(i))?;
                let pe = g.constant(self.pe[i + 1].clone());
                x = g.add(x, pe)?;
            }
        }
        taps.push(x);
        Ok(FeaturePyramid {
            levels: taps.try_into().expect("one tap per level"),
            grids: std::array::from_fn(|l| self.config.level_grid(l)),
        })
    }
}

fn level_pes(config: &ModelConfig) -> Result<Vec<Tensor>> {
    (0..LEVELS).map(|l| sinusoidal_pe_3d(config.level_grid(l), config.level_channels(l))).collect()
}

/// Pyramid level shapes as `(W, H, D, C)`, finest first.
pub fn pyramid_shapes(config: &ModelConfig) -> [[usize; 4]; LEVELS] {
    std::array::from_fn(|l| {
        let [d, h, w] = config.level_grid(l);
        [w, h, d, config.level_channels(l)]
    })
}
