//! Named parameter storage shared by the model, optimizer and checkpoints.

use std::sync::Arc;

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// How a stored tensor participates in training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// A model parameter that never receives gradients.
    Frozen,
    /// Running statistics; not a parameter, but saved with the model.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Param {
    value: Arc<Tensor>,
    grad: Option<Tensor>,
    kind: ParamKind,
}

impl Param {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> Option<&Tensor> {
        self.grad.as_ref()
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }
}

/// Running-statistics observation recorded by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BufferUpdate {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

pub const BATCH_NORM_MOMENTUM: f32 = 0.1;

/// Insertion-ordered map from checkpoint name to tensor.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: IndexMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, kind: ParamKind) -> Result<ParamId> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name `{name}`")));
        }
        let (idx, _) = self.entries.insert_full(name, Param { value: Arc::new(value), grad: None, kind });
        Ok(ParamId(idx))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).map(|(k, _)| k.as_str()).expect("valid id")
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub(crate) fn value_arc(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.entries[id.0].value)
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    /// Replace a tensor, keeping its shape.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let name = self.name(id).to_string();
        let slot = &mut self.entries[id.0];
        if slot.value.shape() != value.shape() {
            return Err(Error::TensorMismatch { name, expected: slot.value.shape().to_vec(), found: value.shape().to_vec() });
        }
        slot.value = Arc::new(value);
        Ok(())
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].kind == ParamKind::Trainable
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Param)> {
        self.entries.iter().enumerate().map(|(i, (k, p))| (ParamId(i), k.as_str(), p))
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.entries[id.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.grad = None;
        }
    }

    /// Add a backward pass's parameter gradients into the stored gradients.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.params() {
            let slot = &mut self.entries[id.0];
            match &mut slot.grad {
                Some(acc) => acc.add_assign(g),
                none => *none = Some(g.clone()),
            }
        }
    }

    pub fn scale_grads(&mut self, factor: f32) {
        for p in self.entries.values_mut() {
            if let Some(g) = &mut p.grad {
                g.data_mut().iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    /// Fold batch-norm observations into the running statistics, in order.
    pub fn apply_buffer_updates(&mut self, updates: &[BufferUpdate]) {
        let m = BATCH_NORM_MOMENTUM;
        for u in updates {
            for (id, obs) in [(u.mean_id, &u.mean), (u.var_id, &u.var)] {
                let t = self.value_mut(id);
                t.data_mut().iter_mut().zip(obs).for_each(|(r, o)| *r = (1.0 - m) * *r + m * o);
            }
        }
    }

    /// Number of scalar parameters (buffers excluded) whose name satisfies `filter`.
    pub fn count_where(&self, filter: impl Fn(&str) -> bool) -> usize {
        self.entries.iter().filter(|(k, p)| p.kind != ParamKind::Buffer && filter(k)).map(|(_, p)| p.value.numel()).sum()
    }
}

/// Weight initializers.
pub mod init {
    use super::*;

    /// Normal(0, std) values.
    pub fn normal(shape: impl Into<Vec<usize>>, std: f32, rng: &mut impl Rng) -> Tensor {
        let dist = Normal::new(0.0f32, std).expect("finite std");
        Tensor::from_fn(shape, |_| dist.sample(rng))
    }

    /// Uniform(-b, b) with `b = sqrt(6 / (fan_in + fan_out))`.
    pub fn xavier_uniform(shape: impl Into<Vec<usize>>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
        let bound = (6.0 / (fan_in + fan_out) as f32).sqrt();
        Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
    }

    /// Kaiming-style uniform for layers followed by GeLU/ReLU-like activations.
    pub fn kaiming_uniform(shape: impl Into<Vec<usize>>, fan_in: usize, rng: &mut impl Rng) -> Tensor {
        let bound = (6.0 / fan_in as f32).sqrt();
        Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
    }
}
