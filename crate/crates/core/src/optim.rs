//! Decoupled-weight-decay Adam.

use serde::{Deserialize, Serialize};

use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Moment buffers for one parameter.
#[derive(Clone, Debug)]
pub struct Moments {
    pub first: Tensor,
    pub second: Tensor,
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    step: u64,
    moments: Vec<Option<Moments>>,
}

/// One AdamW update of a flat parameter slice. `step` is the 1-based step index.
pub fn adamw_update(param: &mut [f32], grad: &[f32], m: &mut [f32], v: &mut [f32], step: u64, cfg: &AdamWConfig, lr: f32) {
    let bc1 = 1.0 - (cfg.beta1 as f64).powi(step as i32);
    let bc2 = 1.0 - (cfg.beta2 as f64).powi(step as i32);
    let decay = 1.0 - lr * cfg.weight_decay;
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] as f64 / bc1;
        let v_hat = v[i] as f64 / bc2;
        param[i] = (param[i] * decay) - (lr as f64 * m_hat / (v_hat.sqrt() + cfg.eps as f64)) as f32;
    }
}

impl OptimizerState {
    pub fn new(config: AdamWConfig) -> Self {
        Self { config, step: 0, moments: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, id: ParamId) -> Option<&Moments> {
        self.moments.get(id.0).and_then(Option::as_ref)
    }

    /// Update every trainable parameter. Parameters without a stored gradient
    /// are treated as having a zero gradient (they still decay).
    pub fn step(&mut self, store: &mut ParamStore, lr: f32) {
        self.step += 1;
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let ids: Vec<ParamId> = store.iter().filter(|(id, _, _)| store.is_trainable(*id)).map(|(id, _, _)| id).collect();
        for id in ids {
            let grad = store.grad(id).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; store.value(id).numel()]);
            let shape = store.value(id).shape().to_vec();
            let mom =
                self.moments[id.0].get_or_insert_with(|| Moments { first: Tensor::zeros(shape.clone()), second: Tensor::zeros(shape) });
            let param = store.value_mut(id);
            adamw_update(param.data_mut(), &grad, mom.first.data_mut(), mom.second.data_mut(), self.step, &self.config, lr);
        }
    }
}
