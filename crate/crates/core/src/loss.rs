//! Training losses. Predictions are probabilities recorded in a [`Graph`];
//! targets are binary volumes of the same shape.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Smoothing term of the Dice-style losses.
pub const DICE_EPS: f32 = 1e-6;
/// Lower clamp of `p_t` before the logarithm.
pub const FOCAL_CLAMP: f32 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f32,
    pub gamma: f32,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { alpha: 0.25, gamma: 3.0 }
    }
}

impl FocalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(config_err("focal.alpha", format!("{} outside (0, 1]", self.alpha)));
        }
        if self.gamma.is_nan() || self.gamma < 0.0 {
            return Err(config_err("focal.gamma", format!("{} is negative", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonConfig {
    pub iterations: usize,
}

impl Default for SkeletonConfig {
    fn default() -> Self {
        Self { iterations: 3 }
    }
}

/// Weights of the focal, Dice and clDice terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub focal: f32,
    pub dice: f32,
    pub cldice: f32,
}

impl LossWeights {
    pub const SOMA: Self = Self { focal: 0.5, dice: 0.5, cldice: 0.0 };
    pub const BRANCH: Self = Self { focal: 0.2, dice: 0.6, cldice: 0.2 };
}

fn check_shapes(op: &'static str, g: &Graph, pred: Var, target: &Tensor) -> Result<()> {
    if g.shape(pred) != target.shape() {
        return Err(shape_err(op, format!("prediction {:?} vs target {:?}", g.shape(pred), target.shape())));
    }
    Ok(())
}

/// Mean over voxels of `-α (1 - p_t)^γ ln p_t`, where `p_t` is `pred` on
/// foreground voxels and `1 - pred` on background.
pub fn focal_loss(g: &mut Graph, pred: Var, target: &Tensor, params: FocalParams) -> Result<Var> {
    check_shapes("focal_loss", g, pred, target)?;
    let sign = g.constant(Tensor::new(target.shape().to_vec(), target.data().iter().map(|t| 2.0 * t - 1.0).collect())?);
    let offset = g.constant(Tensor::new(target.shape().to_vec(), target.data().iter().map(|t| 1.0 - t).collect())?);
    let pt = g.mul(pred, sign)?;
    let pt = g.add(pt, offset)?;
    let pt = g.clamp(pt, FOCAL_CLAMP, 1.0)?;
    let log_pt = g.ln(pt)?;
    let per_voxel = if params.gamma == 0.0 {
        log_pt
    } else {
        let q = g.rsub_scalar(1.0, pt)?;
        let q = g.clamp(q, 0.0, 1.0)?;
        let w = g.pow(q, params.gamma)?;
        g.mul(w, log_pt)?
    };
    let m = g.mean(per_voxel)?;
    g.scale(m, -params.alpha)
}

/// `1 - (2 Σ a·b + ε) / (Σ a + Σ b + ε)` on two recorded volumes.
fn soft_dice(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let ab = g.mul(a, b)?;
    let inter = g.sum(ab)?;
    let sa = g.sum(a)?;
    let sb = g.sum(b)?;
    let num = g.scale(inter, 2.0)?;
    let num = g.add_scalar(num, DICE_EPS)?;
    let den = g.add(sa, sb)?;
    let den = g.add_scalar(den, DICE_EPS)?;
    let inv = g.pow(den, -1.0)?;
    let ratio = g.mul(num, inv)?;
    g.rsub_scalar(1.0, ratio)
}

/// Soft Dice loss `1 - (2Σpt + ε)/(Σp + Σt + ε)`.
pub fn dice_loss(g: &mut Graph, pred: Var, target: &Tensor) -> Result<Var> {
    check_shapes("dice_loss", g, pred, target)?;
    let t = g.constant(target.clone());
    soft_dice(g, pred, t)
}

fn soft_erode(g: &mut Graph, x: Var) -> Result<Var> {
    let a = g.min_pool3d(x, [3, 1, 1])?;
    let b = g.min_pool3d(x, [1, 3, 1])?;
    let c = g.min_pool3d(x, [1, 1, 3])?;
    let ab = g.minimum(a, b)?;
    g.minimum(ab, c)
}

fn soft_open(g: &mut Graph, x: Var) -> Result<Var> {
    let e = soft_erode(g, x)?;
    g.max_pool3d(e, [3, 3, 3])
}

/// Differentiable skeleton of a `[C, D, H, W]` probability volume: the
/// residuals of morphological opening accumulated over iterated soft erosions,
/// finally capped by the input so the skeleton never exceeds the mask.
pub fn soft_skeleton(g: &mut Graph, mask: Var, cfg: SkeletonConfig) -> Result<Var> {
    if cfg.iterations == 0 {
        return Err(config_err("skeleton.iterations", "must be at least 1"));
    }
    let opened = soft_open(g, mask)?;
    let diff = g.sub(mask, opened)?;
    let mut skel = g.relu(diff)?;
    let mut x = mask;
    for _ in 0..cfg.iterations {
        x = soft_erode(g, x)?;
        let opened = soft_open(g, x)?;
        let diff = g.sub(x, opened)?;
        let delta = g.relu(diff)?;
        // skel += relu(delta - skel·delta)
        let overlap = g.mul(skel, delta)?;
        let fresh = g.sub(delta, overlap)?;
        let fresh = g.relu(fresh)?;
        skel = g.add(skel, fresh)?;
    }
    g.minimum(skel, mask)
}

/// Skeleton Dice: `1 - (2ΣS·T + ε)/(ΣS + ΣT + ε)` with `S`, `T` the soft
/// skeletons of prediction and target.
pub fn cldice_loss(g: &mut Graph, pred: Var, target: &Tensor, cfg: SkeletonConfig) -> Result<Var> {
    check_shapes("cldice_loss", g, pred, target)?;
    let s = soft_skeleton(g, pred, cfg)?;
    let t = {
        let mut tg = Graph::inference();
        let tv = tg.constant(target.clone());
        let sk = soft_skeleton(&mut tg, tv, cfg)?;
        tg.value(sk).clone()
    };
    let t = g.constant(t);
    soft_dice(g, s, t)
}

/// Weighted sum of the three terms; zero-weight terms are not evaluated.
pub fn weighted_loss(g: &mut Graph, pred: Var, target: &Tensor, w: LossWeights, focal: FocalParams, skel: SkeletonConfig) -> Result<Var> {
    let mut total: Option<Var> = None;
    let mut push = |g: &mut Graph, term: Var, weight: f32| -> Result<()> {
        let t = g.scale(term, weight)?;
        total = Some(match total {
            Some(acc) => g.add(acc, t)?,
            None => t,
        });
        Ok(())
    };
    if w.focal != 0.0 {
        let f = focal_loss(g, pred, target, focal)?;
        push(g, f, w.focal)?;
    }
    if w.dice != 0.0 {
        let d = dice_loss(g, pred, target)?;
        push(g, d, w.dice)?;
    }
    if w.cldice != 0.0 {
        let c = cldice_loss(g, pred, target, skel)?;
        push(g, c, w.cldice)?;
    }
    match total {
        Some(t) => Ok(t),
        None => Err(config_err("loss_weights", "all weights are zero")),
    }
}

/// `0.5·focal + 0.5·dice`.
pub fn soma_loss(g: &mut Graph, pred: Var, target: &Tensor) -> Result<Var> {
    weighted_loss(g, pred, target, LossWeights::SOMA, FocalParams::default(), SkeletonConfig::default())
}

/// `0.2·focal + 0.6·dice + 0.2·clDice`.
pub fn branch_loss(g: &mut Graph, pred: Var, target: &Tensor) -> Result<Var> {
    weighted_loss(g, pred, target, LossWeights::BRANCH, FocalParams::default(), SkeletonConfig::default())
}
