use std::sync::Arc;

use crate::error::{shape_err, Result};
use crate::tensor::{strides, Graph, Tensor, Var};

pub(crate) fn permute_tensor(t: &Tensor, axes: &[usize]) -> Tensor {
    let shape = t.shape();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = t.numel();
    let data = t.data();
    let mut out = Vec::with_capacity(n);
    let nd = out_shape.len();
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    // The innermost output axis is walked in a tight loop.
    let inner = out_shape[nd - 1];
    let inner_stride = src_strides[nd - 1];
    for _ in 0..n / inner {
        for j in 0..inner {
            out.push(data[off + j * inner_stride]);
        }
        for ax in (0..nd - 1).rev() {
            idx[ax] += 1;
            off += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Tensor::from_parts(out_shape, out)
}

impl Graph {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let old = self.shape(a).to_vec();
        let out = self.value(a).clone().reshaped(shape.to_vec())?;
        self.record("reshape", out, &[a], move |c| vec![Some(Tensor::from_parts(old.clone(), c.grad.data().to_vec()))])
    }

    /// Reorder axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let nd = self.shape(a).len();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&x| x >= nd || std::mem::replace(&mut seen[x], true)) {
            return Err(shape_err("permute", format!("axes {axes:?} for rank {nd}")));
        }
        let out = permute_tensor(self.value(a), axes);
        let mut inverse = vec![0; nd];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        self.record("permute", out, &[a], move |c| vec![Some(permute_tensor(c.grad, &inverse))])
    }

    /// Swap the two axes of a matrix.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.permute(a, &[1, 0])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(shape_err("concat", format!("axis {axis} for rank {}", first.len())));
        }
        let mut extents = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", format!("{s:?} vs {first:?} along axis {axis}")));
            }
            extents.push(s[axis]);
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let total: usize = extents.iter().sum();
        let mut out = vec![0.0; outer * total * inner];
        let mut offset = 0;
        for (&p, &e) in parts.iter().zip(&extents) {
            let src = self.value(p).data();
            for o in 0..outer {
                let dst = (o * total + offset) * inner;
                out[dst..dst + e * inner].copy_from_slice(&src[o * e * inner..(o + 1) * e * inner]);
            }
            offset += e;
        }
        let mut shape = first.clone();
        shape[axis] = total;
        self.record("concat", Tensor::from_parts(shape, out), parts, move |c| {
            let g = c.grad.data();
            let mut offset = 0;
            extents
                .iter()
                .enumerate()
                .map(|(i, &e)| {
                    let part = c.needs(i).then(|| {
                        let mut d = Vec::with_capacity(outer * e * inner);
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            d.extend_from_slice(&g[src..src + e * inner]);
                        }
                        let mut s = c.inputs[i].shape().to_vec();
                        s[axis] = e;
                        Tensor::from_parts(s, d)
                    });
                    offset += e;
                    part
                })
                .collect()
        })
    }

    /// Select rows of a matrix: output row `i` is input row `index[i]`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || index.iter().any(|&i| i >= s[0]) || index.is_empty() {
            return Err(shape_err("gather_rows", format!("index out of range for {s:?}")));
        }
        let (rows, width) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(index.len() * width);
        for &i in index.iter() {
            out.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        let n_out = index.len();
        self.record("gather_rows", Tensor::from_parts(vec![n_out, width], out), &[a], move |c| {
            let mut d = vec![0.0; rows * width];
            for (r, &i) in index.iter().enumerate() {
                let g = &c.grad.data()[r * width..(r + 1) * width];
                d[i * width..(i + 1) * width].iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
            vec![Some(Tensor::from_parts(vec![rows, width], d))]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_3d_matches_index_formula() {
        let t = Tensor::from_fn(vec![2, 3, 4], |i| i as f32);
        let p = permute_tensor(&t, &[2, 0, 1]);
        assert_eq!(p.shape(), &[4, 2, 3]);
        for a in 0..4 {
            for b in 0..2 {
                for c in 0..3 {
                    assert_eq!(p.data()[a * 6 + b * 3 + c], t.data()[b * 12 + c * 4 + a]);
                }
            }
        }
    }

    #[test]
    fn concat_middle_axis() {
        let mut g = Graph::inference();
        let a = g.constant(Tensor::from_fn(vec![2, 1, 2], |i| i as f32));
        let b = g.constant(Tensor::from_fn(vec![2, 2, 2], |i| 10.0 + i as f32));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[2, 3, 2]);
        assert_eq!(g.value(c).data(), &[0.0, 1.0, 10.0, 11.0, 12.0, 13.0, 2.0, 3.0, 14.0, 15.0, 16.0, 17.0]);
    }

    #[test]
    fn permute_rejects_repeated_axes() {
        let mut g = Graph::inference();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        assert!(g.permute(a, &[0, 0]).is_err());
    }
}
