use std::path::Path;

use log::info;

use super::data::{TrainItem, TrainSet};
use super::schedule::{lr_at, TrainConfig};
use crate::checkpoint::{Checkpoint, EpochRecord};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::loss::weighted_loss;
use crate::model::SegModel;
use crate::optim::OptimizerState;
use crate::params::BufferUpdate;
use crate::synth::derive_seed;
use crate::tensor::{Gradients, Graph};

/// Result of [`train_stage`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch with the lowest mean training loss.
    pub best_epoch: usize,
    pub best_loss: f64,
    /// Snapshot after the last epoch.
    pub checkpoint: Checkpoint,
}

struct SampleResult {
    loss: f64,
    grads: Gradients,
    buffers: Vec<BufferUpdate>,
}

/// Forward and backward pass of one item in its own graph.
pub fn sample_gradients(
    model: &SegModel,
    item: &TrainItem,
    cfg: &TrainConfig,
    dropout_seed: u64,
) -> Result<(f64, Gradients, Vec<BufferUpdate>)> {
    let mut g = Graph::train(dropout_seed);
    let x = g.constant(item.image.clone());
    let prompts = item.prompt.map(|p| vec![p]);
    let pred = model.forward(&mut g, x, prompts.as_deref())?;
    let loss = weighted_loss(&mut g, pred, &item.target, cfg.weights(), cfg.focal, cfg.skeleton)?;
    let value = g.value(loss).item() as f64;
    let grads = g.backward(loss)?;
    Ok((value, grads, g.take_buffer_updates()))
}

fn non_finite(epoch: usize, step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::NonFiniteLoss { epoch, step, detail: format!("{op} produced a non-finite value") },
        other => other,
    }
}

/// Train `model` on `data`. Micro-batches of `batch_size` samples run through
/// `exec`; each micro-batch contributes its mean-loss gradient, and the
/// optimizer steps on the average over `accumulation` micro-batches. A
/// checkpoint is written to `out_dir/last.tr3d` every epoch and to
/// `out_dir/best.tr3d` whenever the epoch loss improves.
pub fn train_stage(
    model: &mut SegModel,
    data: &dyn TrainSet,
    cfg: &TrainConfig,
    exec: Exec,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if data.stage() != model.stage() || cfg.stage != model.stage() {
        return Err(Error::InvalidArgument(format!(
            "stage mismatch: model {}, data {}, config {}",
            model.stage().name(),
            data.stage().name(),
            cfg.stage.name()
        )));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut opt = OptimizerState::new(cfg.optimizer);
    let micro_batches = data.len().div_ceil(cfg.batch_size);
    let mut history = Vec::with_capacity(cfg.epochs);
    let (mut best_epoch, mut best_loss) = (0, f64::INFINITY);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let order = shuffled(data.len(), derive_seed(cfg.seed, epoch as u64));
        model.store.zero_grad();
        let (mut epoch_loss, mut pending) = (0.0f64, 0usize);
        let mut lr = lr_at(epoch as f64, cfg);
        for (mb, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<SampleResult>> = exec.map(chunk, |_, &i| {
                let item = data.item(i, epoch, cfg.seed)?;
                let dropout = derive_seed(derive_seed(cfg.seed ^ 0xD0, epoch as u64), i as u64);
                let (loss, grads, buffers) = sample_gradients(model, &item, cfg, dropout)?;
                Ok(SampleResult { loss, grads, buffers })
            });
            let inv = 1.0 / chunk.len() as f32;
            for r in results {
                let r = r.map_err(|e| non_finite(epoch + 1, step, e))?;
                if !r.loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch: epoch + 1, step, detail: format!("loss = {}", r.loss) });
                }
                epoch_loss += r.loss;
                let mut grads = r.grads;
                grads.scale(inv);
                model.store.accumulate(&grads);
                model.store.apply_buffer_updates(&r.buffers);
            }
            pending += 1;
            if pending == cfg.accumulation || mb + 1 == micro_batches {
                model.store.scale_grads(1.0 / pending as f32);
                lr = lr_at(epoch as f64 + (mb + 1) as f64 / micro_batches as f64, cfg);
                opt.step(&mut model.store, lr as f32);
                model.store.zero_grad();
                pending = 0;
                step += 1;
            }
        }
        let mean = epoch_loss / data.len() as f64;
        history.push(EpochRecord { epoch: epoch + 1, lr, train_loss: mean });
        info!("{} epoch {}/{}: loss {mean:.5}, lr {lr:.3e}", cfg.stage.name(), epoch + 1, cfg.epochs);
        let improved = mean < best_loss;
        if improved {
            best_loss = mean;
            best_epoch = epoch + 1;
        }
        if let Some(dir) = out_dir {
            let ck = Checkpoint::from_model(model, epoch + 1, history.clone());
            ck.save(dir.join("last.tr3d"))?;
            if improved {
                ck.save(dir.join("best.tr3d"))?;
            }
        }
    }
    Ok(TrainOutcome { checkpoint: Checkpoint::from_model(model, cfg.epochs, history.clone()), history, best_epoch, best_loss })
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    v
}
