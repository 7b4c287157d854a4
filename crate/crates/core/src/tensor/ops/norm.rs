use rand::Rng;

use crate::error::{shape_err, Result};
use crate::params::{BufferUpdate, ParamId};
use crate::tensor::{Graph, Tensor, Var};

pub const LAYER_NORM_EPS: f32 = 1e-5;
pub const BATCH_NORM_EPS: f32 = 1e-5;

/// Normalize each group of `len` strided values and apply a per-group affine.
/// Shared by the layer-norm (groups = rows) and batch-norm (groups = channels) paths.
fn normalized_backward(dy: &[f32], xhat: &[f32], gain: f32, inv_std: f32, dx: &mut [f32]) {
    let n = dy.len() as f32;
    let mut sum_d = 0.0f32;
    let mut sum_dx = 0.0f32;
    for (g, xh) in dy.iter().zip(xhat) {
        let d = g * gain;
        sum_d += d;
        sum_dx += d * xh;
    }
    let (mean_d, mean_dx) = (sum_d / n, sum_dx / n);
    for ((o, g), xh) in dx.iter_mut().zip(dy).zip(xhat) {
        *o = inv_std * (g * gain - mean_d - xh * mean_dx);
    }
}

fn mean_var(row: &[f32]) -> (f32, f32) {
    let n = row.len() as f64;
    let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean as f32, var as f32)
}

impl Graph {
    /// Max-stabilized softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(shape_err("softmax", format!("axis {axis} for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        if inner == 1 {
            for (row, dst) in src.chunks(len).zip(out.chunks_mut(len)) {
                let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let mut total = 0.0;
                for (o, &x) in dst.iter_mut().zip(row) {
                    *o = (x - max).exp();
                    total += *o;
                }
                let inv = 1.0 / total;
                dst.iter_mut().for_each(|o| *o *= inv);
            }
        }
        for o in 0..outer * (inner > 1) as usize {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| src[at(k)]).fold(f32::NEG_INFINITY, f32::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (src[at(k)] - max).exp();
                    out[at(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[at(k)] /= total;
                }
            }
        }
        self.record("softmax", Tensor::from_parts(shape, out), &[a], move |c| {
            let (y, g) = (c.output.data(), c.grad.data());
            let mut d = vec![0.0; y.len()];
            if inner == 1 {
                for ((yr, gr), dr) in y.chunks(len).zip(g.chunks(len)).zip(d.chunks_mut(len)) {
                    let dot: f32 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, a), b) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = a * (b - dot);
                    }
                }
            }
            for o in 0..outer * (inner > 1) as usize {
                for i in 0..inner {
                    let at = |k: usize| (o * len + k) * inner + i;
                    let dot: f32 = (0..len).map(|k| y[at(k)] * g[at(k)]).sum();
                    for k in 0..len {
                        d[at(k)] = y[at(k)] * (g[at(k)] - dot);
                    }
                }
            }
            vec![Some(Tensor::from_parts(c.output.shape().to_vec(), d))]
        })
    }

    /// Normalize over the last axis, then scale by `gain` and shift by `bias`.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let width = *shape.last().unwrap();
        if self.shape(gain) != [width] || self.shape(bias) != [width] {
            return Err(shape_err("layer_norm", format!("input {shape:?}, gain {:?}, bias {:?}", self.shape(gain), self.shape(bias))));
        }
        let src = self.value(a).data();
        let (gv, bv) = (self.value(gain).data(), self.value(bias).data());
        let rows = src.len() / width;
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * width..(r + 1) * width];
            let (mean, var) = mean_var(row);
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..width {
                let xh = (row[j] - mean) * is;
                xhat[r * width + j] = xh;
                out[r * width + j] = xh * gv[j] + bv[j];
            }
        }
        self.record("layer_norm", Tensor::from_parts(shape, out), &[a, gain, bias], move |c| {
            let (g, gain) = (c.grad.data(), c.inputs[1].data());
            let gx = c.needs(0).then(|| {
                let mut d = vec![0.0; g.len()];
                let mut scratch = vec![0.0; width];
                for r in 0..rows {
                    let dy = &g[r * width..(r + 1) * width];
                    let xh = &xhat[r * width..(r + 1) * width];
                    // gain varies along the normalized axis, so fold it into dy first
                    let scaled: Vec<f32> = dy.iter().zip(gain).map(|(a, b)| a * b).collect();
                    normalized_backward(&scaled, xh, 1.0, inv_std[r], &mut scratch);
                    d[r * width..(r + 1) * width].copy_from_slice(&scratch);
                }
                Tensor::from_parts(c.inputs[0].shape().to_vec(), d)
            });
            let mut dgain = vec![0.0; width];
            let mut dbias = vec![0.0; width];
            for r in 0..rows {
                for j in 0..width {
                    dgain[j] += g[r * width + j] * xhat[r * width + j];
                    dbias[j] += g[r * width + j];
                }
            }
            vec![gx, Some(Tensor::from_parts(vec![width], dgain)), Some(Tensor::from_parts(vec![width], dbias))]
        })
    }

    /// Per-channel normalization of a channel-first tensor `[C, ...]`.
    ///
    /// Training mode normalizes with the statistics of this tensor and queues a
    /// running-statistics update (see [`Graph::take_buffer_updates`]); evaluation
    /// mode uses the running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        a: Var,
        gain: Var,
        bias: Var,
        running_mean: &Tensor,
        running_var: &Tensor,
        ids: (ParamId, ParamId),
    ) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let channels = shape[0];
        for (name, v) in [
            ("gain", self.shape(gain)),
            ("bias", self.shape(bias)),
            ("running_mean", running_mean.shape()),
            ("running_var", running_var.shape()),
        ] {
            if v != [channels] {
                return Err(shape_err("batch_norm", format!("{name} {v:?} for {channels} channels")));
            }
        }
        let inner = self.value(a).numel() / channels;
        let src = self.value(a).data();
        let (gv, bv) = (self.value(gain).data(), self.value(bias).data());
        let training = self.is_training();
        let mut stats = Vec::with_capacity(channels);
        let mut xhat = vec![0.0; src.len()];
        let mut out = vec![0.0; src.len()];
        let mut update =
            BufferUpdate { mean_id: ids.0, var_id: ids.1, mean: Vec::with_capacity(channels), var: Vec::with_capacity(channels) };
        for ch in 0..channels {
            let plane = &src[ch * inner..(ch + 1) * inner];
            let (mean, var) = if training {
                let (m, v) = mean_var(plane);
                let unbiased = if inner > 1 { v * inner as f32 / (inner - 1) as f32 } else { v };
                update.mean.push(m);
                update.var.push(unbiased);
                (m, v)
            } else {
                (running_mean.data()[ch], running_var.data()[ch])
            };
            let is = 1.0 / (var + BATCH_NORM_EPS).sqrt();
            stats.push(is);
            for j in 0..inner {
                let xh = (plane[j] - mean) * is;
                xhat[ch * inner + j] = xh;
                out[ch * inner + j] = xh * gv[ch] + bv[ch];
            }
        }
        if training {
            self.buffer_updates.push(update);
        }
        self.record("batch_norm", Tensor::from_parts(shape, out), &[a, gain, bias], move |c| {
            let (g, gain) = (c.grad.data(), c.inputs[1].data());
            let gx = c.needs(0).then(|| {
                let mut d = vec![0.0; g.len()];
                for ch in 0..channels {
                    let range = ch * inner..(ch + 1) * inner;
                    if training {
                        normalized_backward(&g[range.clone()], &xhat[range.clone()], gain[ch], stats[ch], &mut d[range]);
                    } else {
                        let k = gain[ch] * stats[ch];
                        d[range.clone()].iter_mut().zip(&g[range]).for_each(|(o, v)| *o = v * k);
                    }
                }
                Tensor::from_parts(c.inputs[0].shape().to_vec(), d)
            });
            let mut dgain = vec![0.0; channels];
            let mut dbias = vec![0.0; channels];
            for ch in 0..channels {
                for j in ch * inner..(ch + 1) * inner {
                    dgain[ch] += g[j] * xhat[j];
                    dbias[ch] += g[j];
                }
            }
            vec![gx, Some(Tensor::from_parts(vec![channels], dgain)), Some(Tensor::from_parts(vec![channels], dbias))]
        })
    }

    /// Inverted dropout: active only in training mode.
    pub fn dropout(&mut self, a: Var, rate: f32) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(shape_err("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if !self.is_training() || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let n = self.value(a).numel();
        let mask: Vec<f32> = (0..n).map(|_| if self.rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let out = Tensor::from_parts(self.shape(a).to_vec(), self.value(a).data().iter().zip(&mask).map(|(x, m)| x * m).collect());
        self.record("dropout", out, &[a], move |c| {
            let d = c.grad.data().iter().zip(&mask).map(|(g, m)| g * m).collect();
            vec![Some(Tensor::from_parts(c.grad.shape().to_vec(), d))]
        })
    }
}
