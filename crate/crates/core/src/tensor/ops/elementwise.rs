use super::{map, zip_map};
use crate::error::{shape_err, Result};
use crate::tensor::{Graph, Tensor, Var};

const FRAC_1_SQRT_2: f32 = std::f32::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f32 = 0.398_942_3;

pub(crate) fn gelu_scalar(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::erff(x * FRAC_1_SQRT_2))
}

fn gelu_grad_scalar(x: f32) -> f32 {
    let cdf = 0.5 * (1.0 + libm::erff(x * FRAC_1_SQRT_2));
    let pdf = INV_SQRT_2PI * (-0.5 * x * x).exp();
    cdf + x * pdf
}

pub(crate) fn sigmoid_scalar(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.record("add", out, &[a, b], |c| vec![Some(c.grad.clone()), Some(c.grad.clone())])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.record("sub", out, &[a, b], |c| vec![Some(c.grad.clone()), c.needs(1).then(|| map(c.grad, |g| -g))])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.record("mul", out, &[a, b], |c| {
            vec![
                c.needs(0).then(|| zip_map(c.grad, c.inputs[1], |g, y| g * y)),
                c.needs(1).then(|| zip_map(c.grad, c.inputs[0], |g, x| g * x)),
            ]
        })
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Result<Var> {
        let out = map(self.value(a), |x| x * s);
        self.record("scale", out, &[a], move |c| vec![Some(map(c.grad, |g| g * s))])
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Result<Var> {
        let out = map(self.value(a), |x| x + s);
        self.record("add_scalar", out, &[a], |c| vec![Some(c.grad.clone())])
    }

    /// `s - a`, the common `1 - p` pattern.
    pub fn rsub_scalar(&mut self, s: f32, a: Var) -> Result<Var> {
        let out = map(self.value(a), |x| s - x);
        self.record("rsub_scalar", out, &[a], |c| vec![Some(map(c.grad, |g| -g))])
    }

    /// Add `bias` (length = last extent) to every row of `a`.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let width = *self.shape(a).last().unwrap();
        if self.shape(bias) != [width] {
            return Err(shape_err("add_row_bias", format!("{:?} vs bias {:?}", self.shape(a), self.shape(bias))));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(a).clone();
        for row in out.data_mut().chunks_mut(width) {
            for (v, bv) in row.iter_mut().zip(&b) {
                *v += bv;
            }
        }
        self.record("add_row_bias", out, &[a, bias], move |c| {
            let gb = c.needs(1).then(|| {
                let mut acc = vec![0.0f32; width];
                for row in c.grad.data().chunks(width) {
                    for (s, g) in acc.iter_mut().zip(row) {
                        *s += g;
                    }
                }
                Tensor::from_parts(vec![width], acc)
            });
            vec![Some(c.grad.clone()), gb]
        })
    }

    /// Add a per-channel bias to a channel-first tensor `[C, ...]`.
    pub fn add_channel_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let channels = self.shape(a)[0];
        if self.shape(bias) != [channels] {
            return Err(shape_err("add_channel_bias", format!("{:?} vs bias {:?}", self.shape(a), self.shape(bias))));
        }
        let inner = self.value(a).numel() / channels;
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(a).clone();
        for (plane, bv) in out.data_mut().chunks_mut(inner).zip(&b) {
            plane.iter_mut().for_each(|v| *v += bv);
        }
        self.record("add_channel_bias", out, &[a, bias], move |c| {
            let gb = c.needs(1).then(|| {
                let sums = c.grad.data().chunks(inner).map(|p| p.iter().sum()).collect();
                Tensor::from_parts(vec![channels], sums)
            });
            vec![Some(c.grad.clone()), gb]
        })
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), gelu_scalar);
        self.record("gelu", out, &[a], |c| vec![Some(zip_map(c.grad, c.inputs[0], |g, x| g * gelu_grad_scalar(x)))])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), sigmoid_scalar);
        self.record("sigmoid", out, &[a], |c| vec![Some(zip_map(c.grad, c.output, |g, y| g * y * (1.0 - y)))])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), |x| x.max(0.0));
        self.record("relu", out, &[a], |c| vec![Some(zip_map(c.grad, c.inputs[0], |g, x| if x > 0.0 { g } else { 0.0 }))])
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), f32::sin);
        self.record("sin", out, &[a], |c| vec![Some(zip_map(c.grad, c.inputs[0], |g, x| g * x.cos()))])
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), f32::cos);
        self.record("cos", out, &[a], |c| vec![Some(zip_map(c.grad, c.inputs[0], |g, x| -g * x.sin()))])
    }

    /// Natural log. Non-positive inputs produce a non-finite error.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), f32::ln);
        self.record("ln", out, &[a], |c| vec![Some(zip_map(c.grad, c.inputs[0], |g, x| g / x))])
    }

    /// `a^p` for non-negative `a`.
    pub fn pow(&mut self, a: Var, p: f32) -> Result<Var> {
        let out = map(self.value(a), |x| x.powf(p));
        self.record("pow", out, &[a], move |c| {
            vec![Some(zip_map(c.grad, c.inputs[0], |g, x| if p == 0.0 { 0.0 } else { g * p * x.powf(p - 1.0) }))]
        })
    }

    /// Clamp into `[lo, hi]`; gradient passes only where the input was inside.
    pub fn clamp(&mut self, a: Var, lo: f32, hi: f32) -> Result<Var> {
        let out = map(self.value(a), |x| x.clamp(lo, hi));
        self.record("clamp", out, &[a], move |c| {
            vec![Some(zip_map(c.grad, c.inputs[0], |g, x| if (lo..=hi).contains(&x) { g } else { 0.0 }))]
        })
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("minimum", a, b)?;
        let out = zip_map(self.value(a), self.value(b), f32::min);
        self.record("minimum", out, &[a, b], |c| {
            let (x, y) = (c.inputs[0].data(), c.inputs[1].data());
            let pick = |first: bool| {
                let data = c.grad.data().iter().enumerate().map(|(i, &g)| if (x[i] <= y[i]) == first { g } else { 0.0 }).collect();
                Tensor::from_parts(c.grad.shape().to_vec(), data)
            };
            vec![c.needs(0).then(|| pick(true)), c.needs(1).then(|| pick(false))]
        })
    }
}
