//! Finite-difference gradient checks shared by the gradient tests and the
//! acceptance run.
//!
//! Each check draws a direction `v` for one input (or parameter), so the
//! analytic side is `<grad, x₊ - x₋>` and the numeric side is
//! `L(x₊) - L(x₋)` with `x± = x ± h·v` rounded to `f32`. Comparing the two
//! un-normalised keeps the rounding of `x±` out of the error. The scalar `L`
//! is a fixed random projection of the op output, summed in `f64`.
//!
//! `v` has random magnitudes but the signs of the analytic gradient (random
//! signs where it is zero), so the directional derivative cannot cancel down
//! to the rounding level of `L`. A wrong sign or magnitude in any component
//! still shows up on the numeric side. The relative error's denominator is
//! floored at that rounding level divided by the tolerance, which only
//! matters for gradients that are identically zero.
//! Inputs to piecewise ops (relu, clamp, minimum, pooling) are kept further
//! than `h` from their kinks and ties.

use std::sync::Arc;

use microseg::loss::{branch_loss, cldice_loss, dice_loss, focal_loss, soft_skeleton, soma_loss, FocalParams, SkeletonConfig};
use microseg::model::encoder::PatchMerge;
use microseg::model::{Rcam, TransformerBlock};
use microseg::nn::{Builder, MultiHeadAttention};
use microseg::params::{ParamId, ParamKind, ParamStore};
use microseg::tensor::Conv3dSpec;
use microseg::{Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

/// Step for single ops and the losses.
const H: f32 = 1e-3;
/// Step for multi-layer modules, where the `h²` truncation term of a 1e-3
/// step already reaches the tolerance.
const H_MODULE: f32 = 3e-4;
const TOL: f64 = 1e-3;
const SEEDS: u64 = 10;
const GRAPH_SEED: u64 = 99;

type Op<'a> = &'a dyn Fn(&mut Graph, &ParamStore, &[Var]) -> microseg::Result<Var>;

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f32) -> Tensor {
    let d = Normal::new(0.0, std).unwrap();
    Tensor::from_fn(shape.to_vec(), |_| d.sample(rng))
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Distinct values in `[lo, hi]` spaced `(hi - lo)/(n - 1)` apart, shuffled,
/// so no pooling window or comparison can flip under an `h` perturbation.
fn lattice(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f32> = (0..n).map(|i| lo + (hi - lo) * i as f32 / (n.max(2) - 1) as f32).collect();
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// Values of magnitude at least `gap`, random sign.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f32) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(gap..1.5);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn binary(rng: &mut ChaCha8Rng, shape: &[usize], p: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| if rng.random_bool(p) { 1.0 } else { 0.0 })
}

fn projection(out: &Tensor, r: &Tensor) -> f64 {
    out.data().iter().zip(r.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
}

fn forward(op: Op, store: &ParamStore, inputs: &[Tensor]) -> Tensor {
    let mut g = Graph::with_mode(false, true, GRAPH_SEED);
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = op(&mut g, store, &vars).unwrap();
    g.value(out).clone()
}

fn perturbed(x: &Tensor, v: &[f32], step: f32) -> Tensor {
    let data = x.data().iter().zip(v).map(|(&a, &d)| a + step * d).collect();
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

fn directional(grad: Option<&Tensor>, plus: &Tensor, minus: &Tensor) -> f64 {
    let Some(grad) = grad else { return 0.0 };
    grad.data().iter().zip(plus.data().iter().zip(minus.data())).map(|(&g, (&p, &m))| g as f64 * (p as f64 - m as f64)).sum()
}

fn relative(analytic: f64, numeric: f64, noise: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(noise / TOL)
}

/// Rounding level of `L(x₊) - L(x₋)`.
fn noise_level(out: &Tensor, r: &Tensor) -> f64 {
    2.0 * f32::EPSILON as f64 * out.data().iter().zip(r.data()).map(|(&a, &b)| (a as f64 * b as f64).abs()).sum::<f64>()
}

fn direction(rng: &mut ChaCha8Rng, grad: Option<&Tensor>, n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| {
            let m = rng.random_range(0.5f32..1.0);
            match grad.map(|g| g.data()[i]) {
                Some(g) if g != 0.0 => m.copysign(g),
                _ if rng.random_bool(0.5) => m,
                _ => -m,
            }
        })
        .collect()
}

/// Outcome of every checked op: worst relative error or the first failure.
#[derive(Default)]
pub struct Suite {
    pub results: Vec<(String, Result<f64, String>)>,
}

impl Suite {
    pub fn worst(&self) -> f64 {
        self.results.iter().filter_map(|(_, r)| r.as_ref().ok()).fold(0.0, |a, &b| a.max(b))
    }

    pub fn failures(&self) -> Vec<String> {
        self.results.iter().filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}"))).collect()
    }

    pub fn assert_ok(&self) {
        let f = self.failures();
        assert!(f.is_empty(), "{}", f.join("\n"));
    }
}

/// Check every input and every trainable parameter of `op` for `SEEDS`
/// random draws of `setup`.
pub fn check_with_store(s: &mut Suite, name: &str, h: f32, setup: &dyn Fn(&mut ChaCha8Rng) -> (ParamStore, Vec<Tensor>), op: Op) {
    let r = run_checks(h, setup, op);
    s.results.push((name.to_string(), r));
}

fn run_checks(h: f32, setup: &dyn Fn(&mut ChaCha8Rng) -> (ParamStore, Vec<Tensor>), op: Op) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + 1);
        let (store, inputs) = setup(&mut rng);
        let base = forward(op, &store, &inputs);
        let r = normal(&mut rng, base.shape(), 1.0);
        let noise = noise_level(&base, &r);

        let mut g = Graph::train(GRAPH_SEED);
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), true)).collect();
        let out = op(&mut g, &store, &vars).unwrap();
        let rv = g.constant(r.clone());
        let prod = g.mul(out, rv).unwrap();
        let loss = g.sum(prod).unwrap();
        let grads = g.backward(loss).unwrap();

        for (i, x) in inputs.iter().enumerate() {
            let v = direction(&mut rng, grads.wrt(vars[i]), x.numel());
            let (xp, xm) = (perturbed(x, &v, h), perturbed(x, &v, -h));
            let mut ip = inputs.clone();
            ip[i] = xp.clone();
            let mut im = inputs.clone();
            im[i] = xm.clone();
            let numeric = projection(&forward(op, &store, &ip), &r) - projection(&forward(op, &store, &im), &r);
            let analytic = directional(grads.wrt(vars[i]), &xp, &xm);
            let err = relative(analytic, numeric, noise);
            if err.is_nan() || err >= TOL {
                return Err(format!("seed {seed} input {i}: analytic {analytic:e} numeric {numeric:e} rel {err:e}"));
            }
            worst = worst.max(err);
        }

        let params: Vec<(ParamId, String)> =
            store.iter().filter(|(_, _, p)| p.kind() == ParamKind::Trainable).map(|(id, n, _)| (id, n.to_string())).collect();
        for (id, pname) in params {
            let x = store.value(id).clone();
            let v = direction(&mut rng, grads.param(id), x.numel());
            let (xp, xm) = (perturbed(&x, &v, h), perturbed(&x, &v, -h));
            let mut sp = store.clone();
            sp.set_value(id, xp.clone()).unwrap();
            let mut sm = store.clone();
            sm.set_value(id, xm.clone()).unwrap();
            let numeric = projection(&forward(op, &sp, &inputs), &r) - projection(&forward(op, &sm, &inputs), &r);
            let analytic = directional(grads.param(id), &xp, &xm);
            let err = relative(analytic, numeric, noise);
            if err.is_nan() || err >= TOL {
                return Err(format!("seed {seed} param {pname}: analytic {analytic:e} numeric {numeric:e} rel {err:e}"));
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

pub fn check(
    s: &mut Suite,
    name: &str,
    gen: &dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    op: &dyn Fn(&mut Graph, &[Var]) -> microseg::Result<Var>,
) {
    check_with_store(s, name, H, &|rng| (ParamStore::new(), gen(rng)), &|g, _, v| op(g, v))
}

pub fn elementwise_binary(s: &mut Suite) {
    let two = |rng: &mut ChaCha8Rng| vec![normal(rng, &[3, 5], 1.0), normal(rng, &[3, 5], 1.0)];
    check(s, "add", &two, &|g, v| g.add(v[0], v[1]));
    check(s, "sub", &two, &|g, v| g.sub(v[0], v[1]));
    check(s, "mul", &two, &|g, v| g.mul(v[0], v[1]));
    check(s, "add_row_bias", &|rng| vec![normal(rng, &[4, 6], 1.0), normal(rng, &[6], 1.0)], &|g, v| g.add_row_bias(v[0], v[1]));
    check(s, "add_channel_bias", &|rng| vec![normal(rng, &[3, 2, 2, 2], 1.0), normal(rng, &[3], 1.0)], &|g, v| {
        g.add_channel_bias(v[0], v[1])
    });
    check(
        s,
        "minimum",
        &|rng| {
            let a = normal(rng, &[4, 5], 1.0);
            let b = Tensor::from_fn(vec![4, 5], |i| {
                let gap = rng.random_range(0.05..1.0);
                a.data()[i] + if rng.random_bool(0.5) { gap } else { -gap }
            });
            vec![a, b]
        },
        &|g, v| g.minimum(v[0], v[1]),
    );
}

pub fn elementwise_unary(s: &mut Suite) {
    let smooth = |rng: &mut ChaCha8Rng| vec![normal(rng, &[2, 3, 4], 1.5)];
    check(s, "scale", &smooth, &|g, v| g.scale(v[0], -1.7));
    check(s, "add_scalar", &smooth, &|g, v| g.add_scalar(v[0], 0.3));
    check(s, "rsub_scalar", &smooth, &|g, v| g.rsub_scalar(1.0, v[0]));
    check(s, "gelu", &smooth, &|g, v| g.gelu(v[0]));
    check(s, "sigmoid", &smooth, &|g, v| g.sigmoid(v[0]));
    check(s, "sin", &smooth, &|g, v| g.sin(v[0]));
    check(s, "cos", &smooth, &|g, v| g.cos(v[0]));
    check(s, "relu", &|rng| vec![away_from_zero(rng, &[2, 3, 4], 0.05)], &|g, v| g.relu(v[0]));
    let positive = |rng: &mut ChaCha8Rng| vec![uniform(rng, &[3, 4], 0.3, 2.0)];
    check(s, "ln", &positive, &|g, v| g.ln(v[0]));
    for p in [-1.0, 0.5, 2.0, 3.0] {
        check(s, &format!("pow {p}"), &positive, &|g, v| g.pow(v[0], p));
    }
    check(s, "clamp", &|rng| vec![lattice(rng, &[30], -1.0, 1.0)], &|g, v| g.clamp(v[0], -0.41, 0.53));
}

pub fn linear_algebra(s: &mut Suite) {
    check(s, "matmul", &|rng| vec![normal(rng, &[3, 4], 1.0), normal(rng, &[4, 5], 1.0)], &|g, v| g.matmul(v[0], v[1]));
    check(s, "bmm", &|rng| vec![normal(rng, &[2, 3, 4], 1.0), normal(rng, &[2, 4, 5], 1.0)], &|g, v| g.bmm(v[0], v[1], false));
    check(s, "bmm transposed", &|rng| vec![normal(rng, &[2, 3, 4], 1.0), normal(rng, &[2, 5, 4], 1.0)], &|g, v| g.bmm(v[0], v[1], true));
    check(s, "linear", &|rng| vec![normal(rng, &[5, 4], 1.0), normal(rng, &[3, 4], 1.0), normal(rng, &[3], 1.0)], &|g, v| {
        g.linear(v[0], v[1], Some(v[2]))
    });
    check(s, "linear no bias", &|rng| vec![normal(rng, &[5, 4], 1.0), normal(rng, &[3, 4], 1.0)], &|g, v| g.linear(v[0], v[1], None));
}

pub fn normalisation_and_dropout(s: &mut Suite) {
    for axis in 0..3 {
        check(s, &format!("softmax axis {axis}"), &|rng| vec![normal(rng, &[3, 4, 5], 1.5)], &|g, v| g.softmax(v[0], axis));
    }
    check(s, "layer_norm", &|rng| vec![normal(rng, &[4, 6], 1.0), normal(rng, &[6], 1.0), normal(rng, &[6], 1.0)], &|g, v| {
        g.layer_norm(v[0], v[1], v[2])
    });
    let mut ids = ParamStore::new();
    let rm = ids.add("rm", Tensor::zeros(vec![3]), ParamKind::Buffer).unwrap();
    let rv = ids.add("rv", Tensor::full(vec![3], 1.0), ParamKind::Buffer).unwrap();
    let (mean, var) = (Tensor::zeros(vec![3]), Tensor::full(vec![3], 1.0));
    check(s, "batch_norm", &|rng| vec![normal(rng, &[3, 2, 3, 3], 2.0), normal(rng, &[3], 1.0), normal(rng, &[3], 1.0)], &|g, v| {
        g.batch_norm(v[0], v[1], v[2], &mean, &var, (rm, rv))
    });
    check(s, "dropout", &|rng| vec![normal(rng, &[4, 8], 1.0)], &|g, v| g.dropout(v[0], 0.3));
}

pub fn reductions_and_shapes(s: &mut Suite) {
    let x = |rng: &mut ChaCha8Rng| vec![normal(rng, &[2, 3, 4], 1.0)];
    check(s, "sum", &x, &|g, v| g.sum(v[0]));
    check(s, "mean", &x, &|g, v| g.mean(v[0]));
    for axis in 0..3 {
        check(s, &format!("sum_axis {axis}"), &x, &|g, v| g.sum_axis(v[0], axis));
    }
    check(s, "reshape", &x, &|g, v| g.reshape(v[0], &[6, 4]));
    check(s, "permute", &x, &|g, v| g.permute(v[0], &[2, 0, 1]));
    check(s, "transpose", &|rng| vec![normal(rng, &[3, 5], 1.0)], &|g, v| g.transpose(v[0]));
    check(s, "concat", &|rng| vec![normal(rng, &[2, 1, 3], 1.0), normal(rng, &[2, 4, 3], 1.0), normal(rng, &[2, 2, 3], 1.0)], &|g, v| {
        g.concat(&[v[0], v[1], v[2]], 1)
    });
    let index = Arc::new(vec![2, 0, 2, 1, 2]);
    check(s, "gather_rows", &|rng| vec![normal(rng, &[3, 4], 1.0)], &|g, v| g.gather_rows(v[0], index.clone()));
}

pub fn convolutions_and_pooling(s: &mut Suite) {
    check(
        s,
        "conv3d same",
        &|rng| vec![normal(rng, &[2, 3, 4, 5], 1.0), normal(rng, &[3, 2, 3, 3, 3], 0.3), normal(rng, &[3], 1.0)],
        &|g, v| g.conv3d(v[0], v[1], Some(v[2]), Conv3dSpec::same(3)),
    );
    check(s, "conv3d strided", &|rng| vec![normal(rng, &[2, 4, 6, 6], 1.0), normal(rng, &[3, 2, 2, 2, 2], 0.3)], &|g, v| {
        g.conv3d(v[0], v[1], None, Conv3dSpec::new([2, 2, 2], [0, 0, 0]))
    });
    check(s, "conv3d anisotropic", &|rng| vec![normal(rng, &[1, 3, 5, 4], 1.0), normal(rng, &[2, 1, 1, 3, 3], 0.3)], &|g, v| {
        g.conv3d(v[0], v[1], None, Conv3dSpec::new([1, 2, 1], [0, 1, 1]))
    });
    check(
        s,
        "conv_transpose3d",
        &|rng| vec![normal(rng, &[3, 2, 2, 3], 1.0), normal(rng, &[3, 2, 2, 2, 2], 0.3), normal(rng, &[2], 1.0)],
        &|g, v| g.conv_transpose3d(v[0], v[1], Some(v[2]), [2, 2, 2]),
    );
    for kernel in [[3, 3, 3], [3, 1, 1], [1, 1, 3]] {
        let x = |rng: &mut ChaCha8Rng| vec![lattice(rng, &[2, 3, 4, 4], -1.0, 1.0)];
        check(s, &format!("max_pool3d {kernel:?}"), &x, &|g, v| g.max_pool3d(v[0], kernel));
        check(s, &format!("min_pool3d {kernel:?}"), &x, &|g, v| g.min_pool3d(v[0], kernel));
    }
}

fn prediction(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    vec![lattice(rng, &[1, 4, 6, 6], 0.05, 0.95)]
}

pub fn composite_losses(s: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let target = binary(&mut rng, &[1, 4, 6, 6], 0.35);
    let skel = SkeletonConfig::default();
    check(s, "focal", &prediction, &|g, v| focal_loss(g, v[0], &target, FocalParams::default()));
    check(s, "focal gamma 0", &prediction, &|g, v| focal_loss(g, v[0], &target, FocalParams { alpha: 0.5, gamma: 0.0 }));
    check(s, "dice", &prediction, &|g, v| dice_loss(g, v[0], &target));
    check(s, "soft_skeleton", &prediction, &|g, v| soft_skeleton(g, v[0], skel));
    check(s, "cldice", &prediction, &|g, v| cldice_loss(g, v[0], &target, skel));
    check(s, "soma loss", &prediction, &|g, v| soma_loss(g, v[0], &target));
    check(s, "branch loss", &prediction, &|g, v| branch_loss(g, v[0], &target));
}

fn builder_store(rng: &mut ChaCha8Rng) -> (ParamStore, ChaCha8Rng) {
    (ParamStore::new(), ChaCha8Rng::seed_from_u64(rng.random()))
}

/// Give every parameter a non-trivial value (layer-norm gains and biases
/// start at 1 and 0).
fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let ids: Vec<ParamId> = store.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        let t = store.value_mut(id);
        for v in t.data_mut() {
            *v += 0.2 * rng.sample::<f32, _>(StandardNormal);
        }
    }
}

pub fn attention_modules(s: &mut Suite) {
    let dim = 8;
    let attn_setup = |rng: &mut ChaCha8Rng| {
        let (mut store, mut r) = builder_store(rng);
        MultiHeadAttention::new(&mut Builder { store: &mut store, rng: &mut r }, "attn", dim, 2).unwrap();
        jitter(&mut store, rng);
        (store, vec![normal(rng, &[3, dim], 1.0), normal(rng, &[5, dim], 1.0), normal(rng, &[5, dim], 1.0)])
    };
    let attn = {
        let (mut store, mut r) = (ParamStore::new(), ChaCha8Rng::seed_from_u64(0));
        MultiHeadAttention::new(&mut Builder { store: &mut store, rng: &mut r }, "attn", dim, 2).unwrap()
    };
    check_with_store(s, "attention", H_MODULE, &attn_setup, &|g, s, v| attn.forward(g, s, v[0], v[1], v[2]));

    let block = {
        let (mut store, mut r) = (ParamStore::new(), ChaCha8Rng::seed_from_u64(0));
        TransformerBlock::new(&mut Builder { store: &mut store, rng: &mut r }, "blk", dim, 2, 2).unwrap()
    };
    let block_setup = |rng: &mut ChaCha8Rng| {
        let (mut store, mut r) = builder_store(rng);
        TransformerBlock::new(&mut Builder { store: &mut store, rng: &mut r }, "blk", dim, 2, 2).unwrap();
        jitter(&mut store, rng);
        (store, vec![normal(rng, &[6, dim], 1.0)])
    };
    check_with_store(s, "transformer block", H_MODULE, &block_setup, &|g, s, v| block.forward(g, s, v[0]));

    let rcam = {
        let (mut store, mut r) = (ParamStore::new(), ChaCha8Rng::seed_from_u64(0));
        Rcam::new(&mut Builder { store: &mut store, rng: &mut r }, "rcam", dim, 2, 2).unwrap()
    };
    let rcam_setup = |rng: &mut ChaCha8Rng| {
        let (mut store, mut r) = builder_store(rng);
        Rcam::new(&mut Builder { store: &mut store, rng: &mut r }, "rcam", dim, 2, 2).unwrap();
        jitter(&mut store, rng);
        let inputs =
            vec![normal(rng, &[7, dim], 1.0), normal(rng, &[2, dim], 1.0), normal(rng, &[7, dim], 0.5), normal(rng, &[2, dim], 0.5)];
        (store, inputs)
    };
    check_with_store(s, "rcam", H_MODULE, &rcam_setup, &|g, s, v| rcam.forward(g, s, v[0], v[1], v[2], v[3]));

    let merge = {
        let (mut store, mut r) = (ParamStore::new(), ChaCha8Rng::seed_from_u64(0));
        PatchMerge::new(&mut Builder { store: &mut store, rng: &mut r }, "merge", 4).unwrap()
    };
    let merge_setup = |rng: &mut ChaCha8Rng| {
        let (mut store, mut r) = builder_store(rng);
        PatchMerge::new(&mut Builder { store: &mut store, rng: &mut r }, "merge", 4).unwrap();
        jitter(&mut store, rng);
        (store, vec![normal(rng, &[2 * 4 * 4, 4], 1.0)])
    };
    check_with_store(s, "patch merge", H_MODULE, &merge_setup, &|g, s, v| merge.forward(g, s, v[0], [2, 4, 4]));
}

pub fn gelu_slope_at_zero(s: &mut Suite) {
    let at = |x: f32| {
        let mut g = Graph::inference();
        let v = g.constant(Tensor::scalar(x));
        let y = g.gelu(v).unwrap();
        g.value(y).item() as f64
    };
    let numeric = (at(H) - at(-H)) / (2.0 * H as f64);
    let mut g = Graph::train(0);
    let x = g.input(Tensor::scalar(0.0), true);
    let y = g.gelu(x).unwrap();
    let analytic = g.backward(y).unwrap().wrt(x).unwrap().item() as f64;
    let r = if (numeric - 0.5).abs() < 1e-4 && (analytic - 0.5).abs() < 1e-6 {
        Ok((numeric - 0.5).abs().max((analytic - 0.5).abs()))
    } else {
        Err(format!("numeric {numeric}, analytic {analytic}, expected 0.5"))
    };
    s.results.push(("gelu slope at 0".into(), r));
}

pub fn conv_gelu_norm_chain(s: &mut Suite) {
    let spec = Conv3dSpec::same(3);
    check_with_store(
        s,
        "conv3d -> gelu -> layer_norm -> sum",
        H,
        &|rng| {
            let mut store = ParamStore::new();
            store.add("w", normal(rng, &[2, 1, 3, 3, 3], 0.4), ParamKind::Trainable).unwrap();
            store.add("b", normal(rng, &[2], 0.2), ParamKind::Trainable).unwrap();
            store.add("gain", uniform(rng, &[4], 0.5, 1.5), ParamKind::Trainable).unwrap();
            store.add("bias", normal(rng, &[4], 0.2), ParamKind::Trainable).unwrap();
            (store, vec![normal(rng, &[1, 2, 4, 4], 1.0)])
        },
        &|g, s, v| {
            let p = |g: &mut Graph, n: &str| g.param(s, s.id(n).unwrap());
            let (w, b, gain, bias) = (p(g, "w"), p(g, "b"), p(g, "gain"), p(g, "bias"));
            let y = g.conv3d(v[0], w, Some(b), spec)?;
            let y = g.gelu(y)?;
            let y = g.reshape(y, &[2 * 2 * 4, 4])?;
            let y = g.layer_norm(y, gain, bias)?;
            g.sum(y)
        },
    );
}

/// Every group, in order.
pub fn all(s: &mut Suite) {
    elementwise_binary(s);
    elementwise_unary(s);
    linear_algebra(s);
    normalisation_and_dropout(s);
    reductions_and_shapes(s);
    convolutions_and_pooling(s);
    composite_losses(s);
    attention_modules(s);
    gelu_slope_at_zero(s);
    conv_gelu_norm_chain(s);
}
