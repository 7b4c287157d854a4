use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::loss::{FocalParams, LossWeights, SkeletonConfig};
use crate::model::Stage;
use crate::optim::AdamWConfig;
use crate::synth::{AugmentOp, AugmentParams};

/// Training hyperparameters of one stage. The default is the desk-scale
/// schedule; [`TrainConfig::full_scale`] gives the full-scale one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub warmup_epochs: usize,
    /// Samples per micro-batch.
    pub batch_size: usize,
    /// Micro-batches per optimizer step.
    pub accumulation: usize,
    pub peak_lr: f64,
    pub final_lr: f64,
    /// Overrides the stage's default loss weighting.
    pub loss_weights: Option<LossWeights>,
    pub focal: FocalParams,
    pub skeleton: SkeletonConfig,
    pub augment: Vec<AugmentOp>,
    pub augment_params: AugmentParams,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Soma,
            epochs: 60,
            warmup_epochs: 15,
            batch_size: 4,
            accumulation: 2,
            peak_lr: 1e-4,
            final_lr: 1e-6,
            loss_weights: None,
            focal: FocalParams::default(),
            skeleton: SkeletonConfig::default(),
            augment: AugmentOp::ALL.to_vec(),
            augment_params: AugmentParams::default(),
            optimizer: AdamWConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// 200 epochs with 50 warm-up epochs, batch 64, accumulation 2.
    pub fn full_scale(stage: Stage) -> Self {
        Self { stage, epochs: 200, warmup_epochs: 50, batch_size: 64, ..Self::default() }
    }

    pub fn for_stage(stage: Stage) -> Self {
        Self { stage, ..Self::default() }
    }

    pub fn weights(&self) -> LossWeights {
        self.loss_weights.unwrap_or(match self.stage {
            Stage::Soma => LossWeights::SOMA,
            Stage::Branch => LossWeights::BRANCH,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(config_err("epochs", "must be at least 1"));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(config_err("warmup_epochs", format!("{} must be smaller than epochs ({})", self.warmup_epochs, self.epochs)));
        }
        if self.batch_size == 0 {
            return Err(config_err("batch_size", "must be at least 1"));
        }
        if self.accumulation == 0 {
            return Err(config_err("accumulation", "must be at least 1"));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(config_err("peak_lr", format!("{} must be positive", self.peak_lr)));
        }
        if !(self.final_lr > 0.0 && self.final_lr <= self.peak_lr) {
            return Err(config_err("final_lr", format!("{} must be positive and at most peak_lr", self.final_lr)));
        }
        let w = self.weights();
        if [w.focal, w.dice, w.cldice].iter().any(|v| v.is_nan() || *v < 0.0) || w.focal + w.dice + w.cldice == 0.0 {
            return Err(config_err("loss_weights", "weights must be nonnegative and not all zero"));
        }
        self.focal.validate()?;
        if self.skeleton.iterations == 0 {
            return Err(config_err("skeleton.iterations", "must be at least 1"));
        }
        let a = &self.augment_params;
        if !(a.scale[0] > 0.0 && a.scale[0] <= a.scale[1]) {
            return Err(config_err("augment_params.scale", format!("{:?} is not a valid range", a.scale)));
        }
        if !(a.gamma[0] > 0.0 && a.gamma[0] <= a.gamma[1]) {
            return Err(config_err("augment_params.gamma", format!("{:?} is not a valid range", a.gamma)));
        }
        Ok(())
    }
}

/// Learning rate at a fractional epoch `t ∈ [0, epochs]`: linear warm-up from
/// `final_lr` to `peak_lr`, then a half cosine back down to `final_lr`.
pub fn lr_at(t: f64, cfg: &TrainConfig) -> f64 {
    let (warm, total) = (cfg.warmup_epochs as f64, cfg.epochs as f64);
    let span = cfg.peak_lr - cfg.final_lr;
    if t < warm {
        cfg.final_lr + span * t / warm
    } else {
        let p = ((t - warm) / (total - warm)).clamp(0.0, 1.0);
        cfg.final_lr + span * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch > cfg.epochs {
        return Err(Error::InvalidArgument(format!("epoch {epoch} beyond the {}-epoch schedule", cfg.epochs)));
    }
    Ok(lr_at(epoch as f64, cfg))
}
