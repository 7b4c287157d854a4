use crate::error::{shape_err, Result};
use crate::tensor::{Graph, Tensor, Triple, Var};

impl Graph {
    /// Stride-1 max pooling over `[C, D, H, W]` with an odd kernel and
    /// "same" output size. Out-of-bounds taps are ignored.
    pub fn max_pool3d(&mut self, a: Var, kernel: Triple) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let [c, d, h, w] = shape[..] else {
            return Err(shape_err("max_pool3d", format!("expected [C, D, H, W], got {shape:?}")));
        };
        if kernel.iter().any(|&k| k % 2 == 0) {
            return Err(shape_err("max_pool3d", format!("kernel {kernel:?} must be odd")));
        }
        let [rd, rh, rw] = kernel.map(|k| (k / 2) as isize);
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        let mut arg = vec![0u32; src.len()];
        let (d, h, w) = (d as isize, h as isize, w as isize);
        for ch in 0..c as isize {
            for z in 0..d {
                for y in 0..h {
                    for x in 0..w {
                        let o = (((ch * d + z) * h + y) * w + x) as usize;
                        let mut best = f32::NEG_INFINITY;
                        let mut best_i = o;
                        for zz in (z - rd).max(0)..=(z + rd).min(d - 1) {
                            for yy in (y - rh).max(0)..=(y + rh).min(h - 1) {
                                let base = ((ch * d + zz) * h + yy) * w;
                                for xx in (x - rw).max(0)..=(x + rw).min(w - 1) {
                                    let i = (base + xx) as usize;
                                    if src[i] > best {
                                        best = src[i];
                                        best_i = i;
                                    }
                                }
                            }
                        }
                        out[o] = best;
                        arg[o] = best_i as u32;
                    }
                }
            }
        }
        self.record("max_pool3d", Tensor::from_parts(shape.clone(), out), &[a], move |ctx| {
            let mut dx = vec![0.0; ctx.grad.numel()];
            for (g, &i) in ctx.grad.data().iter().zip(&arg) {
                dx[i as usize] += g;
            }
            vec![Some(Tensor::from_parts(shape.clone(), dx))]
        })
    }

    /// Stride-1 min pooling, `-max_pool(-a)`.
    pub fn min_pool3d(&mut self, a: Var, kernel: Triple) -> Result<Var> {
        let neg = self.scale(a, -1.0)?;
        let pooled = self.max_pool3d(neg, kernel)?;
        self.scale(pooled, -1.0)
    }
}
