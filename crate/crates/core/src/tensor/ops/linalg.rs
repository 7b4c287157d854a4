use crate::error::{shape_err, Result};
use crate::exec::for_each_chunk_mut;
use crate::tensor::kernels::gemm;
use crate::tensor::{Graph, Tensor, Var};

impl Graph {
    /// `[m×k] · [k×n] -> [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        self.record("matmul", Tensor::from_parts(vec![m, n], out), &[a, b], move |c| {
            let (x, y, g) = (c.inputs[0].data(), c.inputs[1].data(), c.grad.data());
            let ga = c.needs(0).then(|| {
                let mut d = vec![0.0; m * k];
                gemm(m, n, k, g, false, y, true, &mut d, false);
                Tensor::from_parts(vec![m, k], d)
            });
            let gb = c.needs(1).then(|| {
                let mut d = vec![0.0; k * n];
                gemm(k, m, n, x, true, g, false, &mut d, false);
                Tensor::from_parts(vec![k, n], d)
            });
            vec![ga, gb]
        })
    }

    /// Batched product `[B×m×k] · [B×k×n] -> [B×m×n]`, or with `b_t`
    /// the right operand is `[B×n×k]` and used transposed.
    pub fn bmm(&mut self, a: Var, b: Var, b_t: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[2] == if b_t { sb[2] } else { sb[1] };
        if !ok {
            return Err(shape_err("bmm", format!("{sa:?} x {sb:?} (b_t = {b_t})")));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if b_t { sb[1] } else { sb[2] };
        let mut out = vec![0.0; batch * m * n];
        {
            let (x, y) = (self.value(a).data(), self.value(b).data());
            for_each_chunk_mut(&mut out, m * n, |i, o| {
                gemm(m, k, n, &x[i * m * k..], false, &y[i * k * n..], b_t, o, false);
            });
        }
        self.record("bmm", Tensor::from_parts(vec![batch, m, n], out), &[a, b], move |c| {
            let (x, y, g) = (c.inputs[0].data(), c.inputs[1].data(), c.grad.data());
            let ga = c.needs(0).then(|| {
                let mut d = vec![0.0; batch * m * k];
                // dA = dC · Bᵀ  (B stored k×n, or n×k when transposed)
                for_each_chunk_mut(&mut d, m * k, |i, o| {
                    gemm(m, n, k, &g[i * m * n..], false, &y[i * k * n..], !b_t, o, false);
                });
                Tensor::from_parts(vec![batch, m, k], d)
            });
            let gb = c.needs(1).then(|| {
                let mut d = vec![0.0; batch * k * n];
                for_each_chunk_mut(&mut d, k * n, |i, o| {
                    if b_t {
                        // dBᵀ = dCᵀ · A  -> [n×k]
                        gemm(n, m, k, &g[i * m * n..], true, &x[i * m * k..], false, o, false);
                    } else {
                        gemm(k, m, n, &x[i * m * k..], true, &g[i * m * n..], false, o, false);
                    }
                });
                Tensor::from_parts(if b_t { vec![batch, n, k] } else { vec![batch, k, n] }, d)
            });
            vec![ga, gb]
        })
    }

    /// Affine map over rows: `x[N×in] · wᵀ + b` with `w` stored `[out×in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(shape_err("linear", format!("input {sx:?}, weight {sw:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(shape_err("linear", format!("bias {:?} for {} outputs", self.shape(b), sw[0])));
            }
        }
        let (rows, fan_in, fan_out) = (sx[0], sx[1], sw[0]);
        let mut out = vec![0.0; rows * fan_out];
        gemm(rows, fan_in, fan_out, self.value(x).data(), false, self.value(w).data(), true, &mut out, false);
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(fan_out) {
                row.iter_mut().zip(bias).for_each(|(v, bv)| *v += bv);
            }
        }
        let parents: Vec<Var> = std::iter::once(x).chain(std::iter::once(w)).chain(b).collect();
        self.record("linear", Tensor::from_parts(vec![rows, fan_out], out), &parents, move |c| {
            let (xv, wv, g) = (c.inputs[0].data(), c.inputs[1].data(), c.grad.data());
            let gx = c.needs(0).then(|| {
                let mut d = vec![0.0; rows * fan_in];
                gemm(rows, fan_out, fan_in, g, false, wv, false, &mut d, false);
                Tensor::from_parts(vec![rows, fan_in], d)
            });
            let gw = c.needs(1).then(|| {
                let mut d = vec![0.0; fan_out * fan_in];
                gemm(fan_out, rows, fan_in, g, true, xv, false, &mut d, false);
                Tensor::from_parts(vec![fan_out, fan_in], d)
            });
            let mut grads = vec![gx, gw];
            if c.inputs.len() == 3 {
                grads.push(c.needs(2).then(|| {
                    let mut acc = vec![0.0; fan_out];
                    for row in g.chunks(fan_out) {
                        acc.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                    }
                    Tensor::from_parts(vec![fan_out], acc)
                }));
            }
            grads
        })
    }
}
