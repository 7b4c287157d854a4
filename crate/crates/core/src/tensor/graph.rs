use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::params::{BufferUpdate, ParamId, ParamStore};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Inputs handed to a node's backward closure.
pub(crate) struct BackCtx<'a> {
    pub inputs: Vec<&'a Tensor>,
    pub output: &'a Tensor,
    pub grad: &'a Tensor,
    pub needs: Vec<bool>,
}

impl BackCtx<'_> {
    pub fn needs(&self, i: usize) -> bool {
        self.needs[i]
    }
}

pub(crate) type BackwardFn = Box<dyn Fn(&BackCtx) -> Vec<Option<Tensor>> + Send + Sync>;

struct Node {
    value: Arc<Tensor>,
    requires_grad: bool,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    param: Option<ParamId>,
}

/// Tape of executed operations, in execution (and therefore topological) order.
///
/// A graph belongs to one worker. Build one per sample, run the forward pass
/// through its op methods, then call [`Graph::backward`] exactly once.
pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
    training: bool,
    consumed: bool,
    pub(crate) rng: ChaCha8Rng,
    param_vars: HashMap<ParamId, Var>,
    pub(crate) buffer_updates: Vec<BufferUpdate>,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: HashMap<Var, Tensor>,
    params: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    /// Gradient of a leaf created with [`Graph::input`] (`requires_grad = true`).
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v)
    }

    pub fn params(&self) -> &[(ParamId, Tensor)] {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, t)| t)
    }

    /// Multiply every parameter gradient by `factor`.
    pub fn scale(&mut self, factor: f32) {
        for (_, t) in &mut self.params {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
}

impl Graph {
    /// Graph that records gradients, in training mode (dropout and batch statistics active).
    pub fn train(seed: u64) -> Self {
        Self::with_mode(true, true, seed)
    }

    /// Graph that records gradients but runs layers in evaluation mode.
    pub fn eval_with_grad() -> Self {
        Self::with_mode(true, false, 0)
    }

    /// No gradient recording; evaluation mode.
    pub fn inference() -> Self {
        Self::with_mode(false, false, 0)
    }

    pub fn with_mode(grad_enabled: bool, training: bool, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled,
            training,
            consumed: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
            param_vars: HashMap::new(),
            buffer_updates: Vec::new(),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf value. `requires_grad` leaves report their gradient in [`Gradients::wrt`].
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push_leaf(Arc::new(value), requires_grad && self.grad_enabled, None)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.input(value, false)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let requires = self.grad_enabled && store.is_trainable(id);
        let v = self.push_leaf(store.value_arc(id), requires, Some(id));
        self.param_vars.insert(id, v);
        v
    }

    fn push_leaf(&mut self, value: Arc<Tensor>, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node { value, requires_grad, parents: Vec::new(), backward: None, param });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record an op result. Non-finite outputs are rejected here, so no op
    /// can hand NaN or Inf downstream.
    pub(crate) fn record<F>(&mut self, op: &'static str, value: Tensor, parents: &[Var], backward: F) -> Result<Var>
    where
        F: Fn(&BackCtx) -> Vec<Option<Tensor>> + Send + Sync + 'static,
    {
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            requires_grad,
            parents: if requires_grad { parents.to_vec() } else { Vec::new() },
            backward: if requires_grad { Some(Box::new(backward)) } else { None },
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse pass from a scalar `loss`. Consumes the recording.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_node.value.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_node.value.shape().to_vec(), 1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(backward) = node.backward.as_ref() else {
                match node.param {
                    Some(id) => out.params.push((id, g)),
                    None => {
                        out.leaves.insert(Var(i), g);
                    }
                }
                continue;
            };
            let ctx = BackCtx {
                inputs: node.parents.iter().map(|p| &*self.nodes[p.0].value).collect(),
                output: &node.value,
                grad: &g,
                needs: node.parents.iter().map(|p| self.nodes[p.0].requires_grad).collect(),
            };
            let parent_grads = backward(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), self.nodes[p.0].value.shape());
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        for node in &mut self.nodes {
            node.backward = None;
        }
        out.params.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    pub fn take_buffer_updates(&mut self) -> Vec<BufferUpdate> {
        std::mem::take(&mut self.buffer_updates)
    }
}
