use crate::error::{shape_err, Result};
use crate::exec::Exec;
use crate::tensor::kernels::{col2im_add, gemm, im2col, ConvGeom};
use crate::tensor::{Graph, Tensor, Var};

/// Per-axis triple in `(depth, height, width)` order.
pub type Triple = [usize; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub stride: Triple,
    pub padding: Triple,
}

impl Conv3dSpec {
    pub const fn new(stride: Triple, padding: Triple) -> Self {
        Self { stride, padding }
    }

    /// Stride 1, "same" padding for odd cubic kernels.
    pub const fn same(kernel: usize) -> Self {
        let p = kernel / 2;
        Self::new([1, 1, 1], [p, p, p])
    }
}

fn dims4(op: &'static str, s: &[usize]) -> Result<[usize; 4]> {
    match *s {
        [c, d, h, w] => Ok([c, d, h, w]),
        _ => Err(shape_err(op, format!("expected [C, D, H, W], got {s:?}"))),
    }
}

fn dims5(op: &'static str, s: &[usize]) -> Result<[usize; 5]> {
    match *s {
        [a, b, d, h, w] => Ok([a, b, d, h, w]),
        _ => Err(shape_err(op, format!("expected a 5D kernel, got {s:?}"))),
    }
}

fn depth_chunks(g: &ConvGeom) -> Vec<(usize, usize)> {
    let step = g.depth_chunk();
    (0..g.output[0]).step_by(step).map(|d0| (d0, (d0 + step).min(g.output[0]))).collect()
}

/// Copy the `[rows × width]` block of columns `off..off+width` out of a `[rows × total]` matrix.
fn take_cols(src: &[f32], rows: usize, total: usize, off: usize, width: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows * width);
    for r in 0..rows {
        out.extend_from_slice(&src[r * total + off..r * total + off + width]);
    }
    out
}

fn put_cols(dst: &mut [f32], rows: usize, total: usize, off: usize, width: usize, block: &[f32]) {
    for r in 0..rows {
        dst[r * total + off..r * total + off + width].copy_from_slice(&block[r * width..(r + 1) * width]);
    }
}

fn channel_sums(g: &Tensor, channels: usize) -> Tensor {
    let inner = g.numel() / channels;
    Tensor::from_parts(vec![channels], g.data().chunks(inner).map(|p| p.iter().sum()).collect())
}

/// Cross-correlation forward shared by the op and its transposed sibling's backward.
pub(crate) fn conv3d_forward(geom: &ConvGeom, input: &[f32], weight: &[f32], c_out: usize) -> Vec<f32> {
    let total = geom.out_positions();
    let rows = geom.col_rows();
    let plane = geom.plane();
    let chunks = depth_chunks(geom);
    let blocks = Exec::Parallel.map(&chunks, |_, &(d0, d1)| {
        let width = (d1 - d0) * plane;
        let mut col = vec![0.0; rows * width];
        im2col(geom, input, d0, d1, &mut col);
        let mut block = vec![0.0; c_out * width];
        gemm(c_out, rows, width, weight, false, &col, false, &mut block, false);
        block
    });
    let mut out = vec![0.0; c_out * total];
    for (&(d0, d1), block) in chunks.iter().zip(&blocks) {
        put_cols(&mut out, c_out, total, d0 * plane, (d1 - d0) * plane, block);
    }
    out
}

/// Adjoint of [`conv3d_forward`] with respect to its input.
pub(crate) fn conv3d_input_adjoint(geom: &ConvGeom, grad: &[f32], weight: &[f32], c_out: usize) -> Vec<f32> {
    let total = geom.out_positions();
    let rows = geom.col_rows();
    let plane = geom.plane();
    let mut dx = vec![0.0; geom.channels * geom.in_positions()];
    for (d0, d1) in depth_chunks(geom) {
        let width = (d1 - d0) * plane;
        let g = take_cols(grad, c_out, total, d0 * plane, width);
        let mut dcol = vec![0.0; rows * width];
        gemm(rows, c_out, width, weight, true, &g, false, &mut dcol, false);
        col2im_add(geom, &dcol, d0, d1, &mut dx);
    }
    dx
}

/// Input gradient of a conv. Stride-1 convs use the equivalent correlation of
/// `grad` with the flipped, channel-transposed kernel, which avoids the large
/// column buffer of the scatter path when `c_out` is small.
pub(crate) fn conv3d_input_grad(geom: &ConvGeom, grad: &[f32], weight: &[f32], c_out: usize) -> Vec<f32> {
    let k = geom.kernel;
    let flippable = geom.stride == [1, 1, 1] && (0..3).all(|i| geom.pad[i] < k[i]);
    if !flippable {
        return conv3d_input_adjoint(geom, grad, weight, c_out);
    }
    let c_in = geom.channels;
    let taps: usize = k.iter().product();
    let mut flipped = vec![0.0; weight.len()];
    for co in 0..c_out {
        for ci in 0..c_in {
            let src = &weight[(co * c_in + ci) * taps..(co * c_in + ci + 1) * taps];
            let dst = &mut flipped[(ci * c_out + co) * taps..(ci * c_out + co + 1) * taps];
            for (t, v) in src.iter().enumerate() {
                dst[taps - 1 - t] = *v;
            }
        }
    }
    let pad = [0, 1, 2].map(|i| k[i] - 1 - geom.pad[i]);
    let back = ConvGeom::new(c_out, geom.output, k, [1, 1, 1], pad).expect("flipped geometry is valid");
    debug_assert_eq!(back.output, geom.input);
    conv3d_forward(&back, grad, &flipped, c_in)
}

/// `Σ_positions grad · colᵀ`: the weight gradient of a cross-correlation.
pub(crate) fn conv3d_weight_grad(geom: &ConvGeom, input: &[f32], grad: &[f32], c_out: usize) -> Vec<f32> {
    let total = geom.out_positions();
    let rows = geom.col_rows();
    let plane = geom.plane();
    let chunks = depth_chunks(geom);
    let partials = Exec::Parallel.map(&chunks, |_, &(d0, d1)| {
        let width = (d1 - d0) * plane;
        let mut col = vec![0.0; rows * width];
        im2col(geom, input, d0, d1, &mut col);
        let g = take_cols(grad, c_out, total, d0 * plane, width);
        // dwᵀ = col · gᵀ keeps the long axis contiguous in both operands
        let mut dwt = vec![0.0; rows * c_out];
        gemm(rows, width, c_out, &col, false, &g, true, &mut dwt, false);
        dwt
    });
    let mut dw = vec![0.0; c_out * rows];
    for p in partials {
        for r in 0..rows {
            for co in 0..c_out {
                dw[co * rows + r] += p[r * c_out + co];
            }
        }
    }
    dw
}

impl Graph {
    /// 3D cross-correlation of `input[C_in×D×H×W]` with `weight[C_out×C_in×kd×kh×kw]`.
    pub fn conv3d(&mut self, input: Var, weight: Var, bias: Option<Var>, spec: Conv3dSpec) -> Result<Var> {
        let [c_in, d, h, w] = dims4("conv3d", self.shape(input))?;
        let [c_out, wc_in, kd, kh, kw] = dims5("conv3d", self.shape(weight))?;
        if wc_in != c_in {
            return Err(shape_err("conv3d", format!("input has {c_in} channels, kernel expects {wc_in}")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(shape_err("conv3d", format!("bias {:?} for {c_out} channels", self.shape(b))));
            }
        }
        let geom = ConvGeom::new(c_in, [d, h, w], [kd, kh, kw], spec.stride, spec.padding).ok_or_else(|| {
            shape_err(
                "conv3d",
                format!(
                    "kernel {:?} does not fit input {:?} with padding {:?} (stride {:?})",
                    [kd, kh, kw],
                    [d, h, w],
                    spec.padding,
                    spec.stride
                ),
            )
        })?;
        let mut out = conv3d_forward(&geom, self.value(input).data(), self.value(weight).data(), c_out);
        if let Some(b) = bias {
            let inner = geom.out_positions();
            for (plane, bv) in out.chunks_mut(inner).zip(self.value(b).data()) {
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
        let [od, oh, ow] = geom.output;
        let parents: Vec<Var> = [input, weight].into_iter().chain(bias).collect();
        self.record("conv3d", Tensor::from_parts(vec![c_out, od, oh, ow], out), &parents, move |c| {
            let (x, wt, g) = (c.inputs[0].data(), c.inputs[1].data(), c.grad.data());
            let gx = c.needs(0).then(|| Tensor::from_parts(vec![c_in, d, h, w], conv3d_input_grad(&geom, g, wt, c_out)));
            let gw = c.needs(1).then(|| Tensor::from_parts(vec![c_out, c_in, kd, kh, kw], conv3d_weight_grad(&geom, x, g, c_out)));
            let mut grads = vec![gx, gw];
            if c.inputs.len() == 3 {
                grads.push(c.needs(2).then(|| channel_sums(c.grad, c_out)));
            }
            grads
        })
    }

    /// Transposed 3D convolution, the exact adjoint of [`Graph::conv3d`] with
    /// zero padding. `weight` is `[C_in×C_out×kd×kh×kw]`; each output extent is
    /// `(in - 1)·stride + kernel`.
    pub fn conv_transpose3d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: Triple) -> Result<Var> {
        let [c_in, d, h, w] = dims4("conv_transpose3d", self.shape(input))?;
        let [wc_in, c_out, kd, kh, kw] = dims5("conv_transpose3d", self.shape(weight))?;
        if wc_in != c_in {
            return Err(shape_err("conv_transpose3d", format!("input has {c_in} channels, kernel expects {wc_in}")));
        }
        if stride.contains(&0) {
            return Err(shape_err("conv_transpose3d", "stride components must be >= 1"));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(shape_err("conv_transpose3d", format!("bias {:?} for {c_out} channels", self.shape(b))));
            }
        }
        let out_dims = [(d - 1) * stride[0] + kd, (h - 1) * stride[1] + kh, (w - 1) * stride[2] + kw];
        // The transposed conv is the input-adjoint of a conv over the output grid.
        let geom = ConvGeom::new(c_out, out_dims, [kd, kh, kw], stride, [0, 0, 0])
            .ok_or_else(|| shape_err("conv_transpose3d", "invalid geometry"))?;
        debug_assert_eq!(geom.output, [d, h, w]);
        let mut out = conv3d_input_adjoint(&geom, self.value(input).data(), self.value(weight).data(), c_in);
        let inner: usize = out_dims.iter().product();
        if let Some(b) = bias {
            for (plane, bv) in out.chunks_mut(inner).zip(self.value(b).data()) {
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
        let parents: Vec<Var> = [input, weight].into_iter().chain(bias).collect();
        let mut shape = vec![c_out];
        shape.extend(out_dims);
        self.record("conv_transpose3d", Tensor::from_parts(shape, out), &parents, move |c| {
            let (x, wt, g) = (c.inputs[0].data(), c.inputs[1].data(), c.grad.data());
            let gx = c.needs(0).then(|| Tensor::from_parts(vec![c_in, d, h, w], conv3d_forward(&geom, g, wt, c_in)));
            // weight[C_in×(C_out·k)] pairs input channels with output-grid columns
            let gw = c.needs(1).then(|| Tensor::from_parts(vec![c_in, c_out, kd, kh, kw], conv3d_weight_grad(&geom, g, x, c_in)));
            let mut grads = vec![gx, gw];
            if c.inputs.len() == 3 {
                grads.push(c.needs(2).then(|| channel_sums(c.grad, c_out)));
            }
            grads
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_passes_input_through() {
        let mut g = Graph::inference();
        let x = g.constant(Tensor::from_fn(vec![1, 3, 4, 5], |i| i as f32 * 0.1 - 2.0));
        let w = g.constant(Tensor::full(vec![1, 1, 1, 1, 1], 1.0));
        let b = g.constant(Tensor::zeros(vec![1]));
        let y = g.conv3d(x, w, Some(b), Conv3dSpec::new([1, 1, 1], [0, 0, 0])).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn constant_field_interior_is_27c() {
        let c = 0.7;
        let mut g = Graph::inference();
        let x = g.constant(Tensor::full(vec![1, 5, 5, 5], c));
        let w = g.constant(Tensor::full(vec![1, 1, 3, 3, 3], 1.0));
        let y = g.conv3d(x, w, None, Conv3dSpec::same(3)).unwrap();
        let v = g.value(y);
        assert_eq!(v.shape(), &[1, 5, 5, 5]);
        for z in 1..4 {
            for yy in 1..4 {
                for xx in 1..4 {
                    assert!((v.data()[z * 25 + yy * 5 + xx] - 27.0 * c).abs() < 1e-5);
                }
            }
        }
        // a corner only sees 8 in-bounds taps
        assert!((v.data()[0] - 8.0 * c).abs() < 1e-5);
    }

    #[test]
    fn kernel_larger_than_padded_input_fails() {
        let mut g = Graph::inference();
        let x = g.constant(Tensor::zeros(vec![1, 2, 2, 2]));
        let w = g.constant(Tensor::zeros(vec![1, 1, 5, 1, 1]));
        assert!(g.conv3d(x, w, None, Conv3dSpec::new([1, 1, 1], [1, 0, 0])).is_err());
    }

    #[test]
    fn transposed_scatter_of_one_voxel() {
        let mut g = Graph::inference();
        let x = g.constant(Tensor::full(vec![1, 1, 1, 1], 2.5));
        let w = g.constant(Tensor::full(vec![1, 1, 2, 2, 2], 1.0));
        let y = g.conv_transpose3d(x, w, None, [2, 2, 2]).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 2, 2, 2]);
        assert!(g.value(y).data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn transposed_shape_formula() {
        let mut g = Graph::inference();
        let x = g.constant(Tensor::zeros(vec![3, 4, 4, 4]));
        let w = g.constant(Tensor::zeros(vec![3, 2, 2, 2, 2]));
        let y = g.conv_transpose3d(x, w, None, [2, 2, 2]).unwrap();
        assert_eq!(g.shape(y), &[2, 8, 8, 8]);
    }
}
