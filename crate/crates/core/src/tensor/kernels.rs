//! Low-level numeric kernels shared by the ops.

/// `c (+)= op(a) · op(b)` for row-major operands.
///
/// `a` is `m×k` (or `k×m` when `a_t`), `b` is `k×n` (or `n×k` when `b_t`),
/// `c` is a contiguous `m×n` block. With `accumulate` the product is added
/// to `c`, otherwise `c` is overwritten.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f32], a_t: bool, b: &[f32], b_t: bool, c: &mut [f32], accumulate: bool) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every index the strides reach is in bounds.
    unsafe {
        matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Geometry of a 3D cross-correlation over a `c×D×H×W` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    pub fn new(channels: usize, input: [usize; 3], kernel: [usize; 3], stride: [usize; 3], pad: [usize; 3]) -> Option<Self> {
        let mut output = [0; 3];
        for i in 0..3 {
            let padded = input[i] + 2 * pad[i];
            if stride[i] == 0 || kernel[i] == 0 || kernel[i] > padded {
                return None;
            }
            output[i] = (padded - kernel[i]) / stride[i] + 1;
        }
        Some(Self { channels, input, kernel, stride, pad, output })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel.iter().product::<usize>()
    }

    pub fn plane(&self) -> usize {
        self.output[1] * self.output[2]
    }

    pub fn out_positions(&self) -> usize {
        self.output.iter().product()
    }

    pub fn in_positions(&self) -> usize {
        self.input.iter().product()
    }

    /// Number of output depth slices per chunk so a column block stays cache-sized.
    pub fn depth_chunk(&self) -> usize {
        let per_slice = self.col_rows() * self.plane();
        (CHUNK_TARGET / per_slice.max(1)).clamp(1, self.output[0])
    }

    /// Valid output index range along one axis for kernel offset `off`.
    fn valid(&self, axis: usize, off: usize) -> (usize, usize) {
        let (s, p, n_in, n_out) = (self.stride[axis], self.pad[axis], self.input[axis], self.output[axis]);
        // input index = o*s + off - p must lie in [0, n_in)
        let lo = if off >= p { 0 } else { (p - off).div_ceil(s) };
        let hi = if n_in + p > off { ((n_in + p - off - 1) / s + 1).min(n_out) } else { 0 };
        (lo.min(hi), hi)
    }
}

const CHUNK_TARGET: usize = 1 << 19;

/// Fill `col` (`col_rows × (depths.len()·plane)`) with the receptive fields of
/// output depth slices `d0..d1`.
pub(crate) fn im2col(g: &ConvGeom, input: &[f32], d0: usize, d1: usize, col: &mut [f32]) {
    let [_, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [_, oh, ow] = g.output;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let width = (d1 - d0) * oh * ow;
    debug_assert_eq!(col.len(), g.col_rows() * width);
    let (hlo_all, hhi_all): (Vec<_>, Vec<_>) = (0..kh).map(|b| g.valid(1, b)).unzip();
    let (wlo_all, whi_all): (Vec<_>, Vec<_>) = (0..kw).map(|e| g.valid(2, e)).unzip();
    for (r, row) in col.chunks_mut(width).enumerate() {
        let e = r % kw;
        let b = (r / kw) % kh;
        let a = (r / (kw * kh)) % kd;
        let c = r / (kw * kh * kd);
        let (hlo, hhi) = (hlo_all[b], hhi_all[b]);
        let (wlo, whi) = (wlo_all[e], whi_all[e]);
        for (di, od) in (d0..d1).enumerate() {
            let dst_slice = &mut row[di * oh * ow..(di + 1) * oh * ow];
            let id = (od * sd + a) as isize - pd as isize;
            if id < 0 || id as usize >= g.input[0] {
                dst_slice.fill(0.0);
                continue;
            }
            let plane_base = (c * g.input[0] + id as usize) * ih * iw;
            for y in 0..oh {
                let dst = &mut dst_slice[y * ow..(y + 1) * ow];
                if y < hlo || y >= hhi {
                    dst.fill(0.0);
                    continue;
                }
                let iy = y * sh + b - ph;
                let src_row = &input[plane_base + iy * iw..plane_base + (iy + 1) * iw];
                dst[..wlo].fill(0.0);
                dst[whi.max(wlo)..].fill(0.0);
                if sw == 1 {
                    let x0 = wlo + e - pw;
                    dst[wlo..whi].copy_from_slice(&src_row[x0..x0 + (whi - wlo)]);
                } else {
                    for x in wlo..whi {
                        dst[x] = src_row[x * sw + e - pw];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `col` back into `input_grad`.
pub(crate) fn col2im_add(g: &ConvGeom, col: &[f32], d0: usize, d1: usize, input_grad: &mut [f32]) {
    let [_, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [_, oh, ow] = g.output;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let width = (d1 - d0) * oh * ow;
    debug_assert_eq!(col.len(), g.col_rows() * width);
    for (r, row) in col.chunks(width).enumerate() {
        let e = r % kw;
        let b = (r / kw) % kh;
        let a = (r / (kw * kh)) % kd;
        let c = r / (kw * kh * kd);
        let (hlo, hhi) = g.valid(1, b);
        let (wlo, whi) = g.valid(2, e);
        for (di, od) in (d0..d1).enumerate() {
            let id = (od * sd + a) as isize - pd as isize;
            if id < 0 || id as usize >= g.input[0] {
                continue;
            }
            let plane_base = (c * g.input[0] + id as usize) * ih * iw;
            let src_slice = &row[di * oh * ow..(di + 1) * oh * ow];
            for y in hlo..hhi {
                let iy = y * sh + b - ph;
                let dst_row = &mut input_grad[plane_base + iy * iw..plane_base + (iy + 1) * iw];
                let src = &src_slice[y * ow..(y + 1) * ow];
                if sw == 1 {
                    let x0 = wlo + e - pw;
                    for (d, s) in dst_row[x0..x0 + (whi - wlo)].iter_mut().zip(&src[wlo..whi]) {
                        *d += s;
                    }
                } else {
                    for x in wlo..whi {
                        dst_row[x * sw + e - pw] += src[x];
                    }
                }
            }
        }
    }
}
