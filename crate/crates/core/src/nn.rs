//! Parameterized layers. Each layer owns [`ParamId`]s into a [`ParamStore`]
//! and records its forward pass into a [`Graph`].

use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Result};
use crate::params::{init, ParamId, ParamKind, ParamStore};
use crate::tensor::{Conv3dSpec, Graph, Tensor, Triple, Var};

/// Creates named parameters under a common prefix.
pub struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    pub fn add(&mut self, name: &str, value: Tensor, kind: ParamKind) -> Result<ParamId> {
        self.store.add(name, value, kind)
    }

    fn trainable(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        self.store.add(name, value, ParamKind::Trainable)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(b: &mut Builder, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Result<Self> {
        let w = init::xavier_uniform(vec![fan_out, fan_in], fan_in, fan_out, b.rng);
        let weight = b.trainable(&format!("{name}.weight"), w)?;
        let bias = if bias { Some(b.trainable(&format!("{name}.bias"), Tensor::zeros(vec![fan_out]))?) } else { None };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|id| g.param(store, id));
        g.linear(x, w, b)
    }

    pub fn fan_out(&self, store: &ParamStore) -> usize {
        store.value(self.weight).shape()[0]
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(b: &mut Builder, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gain: b.trainable(&format!("{name}.weight"), Tensor::full(vec![width], 1.0))?,
            bias: b.trainable(&format!("{name}.bias"), Tensor::zeros(vec![width]))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (gain, bias) = (g.param(store, self.gain), g.param(store, self.bias));
        g.layer_norm(x, gain, bias)
    }
}

#[derive(Clone, Debug)]
pub struct Conv3d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: Conv3dSpec,
}

impl Conv3d {
    pub fn new(b: &mut Builder, name: &str, c_in: usize, c_out: usize, kernel: Triple, spec: Conv3dSpec, bias: bool) -> Result<Self> {
        let fan_in = c_in * kernel.iter().product::<usize>();
        let w = init::kaiming_uniform(vec![c_out, c_in, kernel[0], kernel[1], kernel[2]], fan_in, b.rng);
        Ok(Self {
            weight: b.trainable(&format!("{name}.weight"), w)?,
            bias: if bias { Some(b.trainable(&format!("{name}.bias"), Tensor::zeros(vec![c_out]))?) } else { None },
            spec,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|id| g.param(store, id));
        g.conv3d(x, w, b, self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose3d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: Triple,
}

impl ConvTranspose3d {
    pub fn new(b: &mut Builder, name: &str, c_in: usize, c_out: usize, kernel: Triple, stride: Triple) -> Result<Self> {
        // each output voxel receives c_in taps when kernel == stride
        let overlap: usize = kernel.iter().zip(&stride).map(|(k, s)| k.div_ceil(*s)).product();
        let w = init::kaiming_uniform(vec![c_in, c_out, kernel[0], kernel[1], kernel[2]], c_in * overlap, b.rng);
        Ok(Self {
            weight: b.trainable(&format!("{name}.weight"), w)?,
            bias: Some(b.trainable(&format!("{name}.bias"), Tensor::zeros(vec![c_out]))?),
            stride,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|id| g.param(store, id));
        g.conv_transpose3d(x, w, b, self.stride)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm3d {
    pub gain: ParamId,
    pub bias: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm3d {
    pub fn new(b: &mut Builder, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gain: b.trainable(&format!("{name}.weight"), Tensor::full(vec![channels], 1.0))?,
            bias: b.trainable(&format!("{name}.bias"), Tensor::zeros(vec![channels]))?,
            running_mean: b.add(&format!("{name}.running_mean"), Tensor::zeros(vec![channels]), ParamKind::Buffer)?,
            running_var: b.add(&format!("{name}.running_var"), Tensor::full(vec![channels], 1.0), ParamKind::Buffer)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (gain, bias) = (g.param(store, self.gain), g.param(store, self.bias));
        g.batch_norm(x, gain, bias, store.value(self.running_mean), store.value(self.running_var), (self.running_mean, self.running_var))
    }
}

/// Multi-head scaled dot-product attention with separate q/k/v/output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(b: &mut Builder, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(shape_err("attention", format!("dim {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(b, &format!("{name}.q"), dim, dim, true)?,
            k: Linear::new(b, &format!("{name}.k"), dim, dim, true)?,
            v: Linear::new(b, &format!("{name}.v"), dim, dim, true)?,
            out: Linear::new(b, &format!("{name}.out"), dim, dim, true)?,
            heads,
        })
    }

    /// `softmax(Q Kᵀ / sqrt(d_head)) V` per head, then the output projection.
    /// `query` is `[Nq×C]`; `key` and `value` are `[Nk×C]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, query: Var, key: Var, value: Var) -> Result<Var> {
        let (nq, dim) = (g.shape(query)[0], g.shape(query)[1]);
        let nk = g.shape(key)[0];
        if g.shape(value)[0] != nk {
            return Err(shape_err("attention", format!("{nk} keys but {} values", g.shape(value)[0])));
        }
        let h = self.heads;
        let d = dim / h;
        let q = self.q.forward(g, store, query)?;
        let k = self.k.forward(g, store, key)?;
        let v = self.v.forward(g, store, value)?;
        let split = |g: &mut Graph, x: Var, n: usize| -> Result<Var> {
            let x = g.reshape(x, &[n, h, d])?;
            g.permute(x, &[1, 0, 2])
        };
        let q = split(g, q, nq)?;
        let k = split(g, k, nk)?;
        let v = split(g, v, nk)?;
        let scores = g.bmm(q, k, true)?;
        let scores = g.scale(scores, 1.0 / (d as f32).sqrt())?;
        let attn = g.softmax(scores, 2)?;
        let ctx = g.bmm(attn, v, false)?;
        let ctx = g.permute(ctx, &[1, 0, 2])?;
        let ctx = g.reshape(ctx, &[nq, dim])?;
        self.out.forward(g, store, ctx)
    }
}

/// Two-layer perceptron with GeLU.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(b: &mut Builder, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(b, &format!("{name}.fc1"), dim, hidden, true)?,
            fc2: Linear::new(b, &format!("{name}.fc2"), hidden, dim, true)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, store, x)?;
        let h = g.gelu(h)?;
        self.fc2.forward(g, store, h)
    }
}

/// Zero a parameter in place (used to collapse residual branches).
pub fn zero_param(store: &mut ParamStore, id: ParamId) {
    store.value_mut(id).data_mut().fill(0.0);
}

impl Linear {
    pub fn zero(&self, store: &mut ParamStore) {
        zero_param(store, self.weight);
        if let Some(b) = self.bias {
            zero_param(store, b);
        }
    }
}
