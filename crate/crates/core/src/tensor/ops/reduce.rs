use crate::error::{shape_err, Result};
use crate::tensor::{Graph, Tensor, Var};

impl Graph {
    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        let shape = self.shape(a).to_vec();
        self.record("sum", Tensor::scalar(s), &[a], move |c| vec![Some(Tensor::full(shape.clone(), c.grad.item()))])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f32;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Sum along `axis`, removing it. Reducing a rank-1 tensor yields shape `[1]`.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(shape_err("sum_axis", format!("axis {axis} for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let row = &src[(o * len + k) * inner..(o * len + k + 1) * inner];
                out[o * inner..(o + 1) * inner].iter_mut().zip(row).for_each(|(s, v)| *s += v);
            }
        }
        let mut out_shape: Vec<usize> = shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &e)| e).collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        self.record("sum_axis", Tensor::from_parts(out_shape, out), &[a], move |c| {
            let g = c.grad.data();
            let mut d = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                for _ in 0..len {
                    d.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(Tensor::from_parts(shape.clone(), d))]
        })
    }
}
