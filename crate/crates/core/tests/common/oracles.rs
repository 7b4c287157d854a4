//! Independent reference implementations and the checks built on them.

use microseg::loss::{branch_loss, cldice_loss, dice_loss, focal_loss, soma_loss, FocalParams, SkeletonConfig};
use microseg::model::encoder::tokens_to_volume;
use microseg::model::{identity_skip, Dims, ModelConfig, SegModel, Stage, Variant, LEVELS, MERGES};
use microseg::nn::{Builder, MultiHeadAttention};
use microseg::params::ParamStore;
use microseg::tensor::Conv3dSpec;
use microseg::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Direct-loop cross-correlation over `[C_in, D, H, W]` with zero padding.
pub fn conv3d_loops(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, spec: Conv3dSpec) -> Tensor {
    let [ci, d, h, wd] = x.shape().try_into().unwrap();
    let [co, _, kd, kh, kw] = w.shape().try_into().unwrap();
    let [sd, sh, sw] = spec.stride;
    let [pd, ph, pw] = spec.padding;
    let od = (d + 2 * pd - kd) / sd + 1;
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (wd + 2 * pw - kw) / sw + 1;
    let (xv, wv) = (x.data(), w.data());
    let mut out = vec![0.0f64; co * od * oh * ow];
    for o in 0..co {
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b.data()[o] as f64);
                    for c in 0..ci {
                        for a in 0..kd {
                            for b in 0..kh {
                                for e in 0..kw {
                                    let iz = (z * sd + a) as isize - pd as isize;
                                    let iy = (y * sh + b) as isize - ph as isize;
                                    let ix = (xx * sw + e) as isize - pw as isize;
                                    if iz < 0 || iy < 0 || ix < 0 || iz >= d as isize || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xi = ((c * d + iz as usize) * h + iy as usize) * wd + ix as usize;
                                    let wi = (((o * ci + c) * kd + a) * kh + b) * kw + e;
                                    acc += xv[xi] as f64 * wv[wi] as f64;
                                }
                            }
                        }
                    }
                    out[((o * od + z) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    Tensor::new(vec![co, od, oh, ow], out.into_iter().map(|v| v as f32).collect()).unwrap()
}

pub fn matmul_loops(a: &Tensor, b: &Tensor) -> Tensor {
    let [m, k] = a.shape().try_into().unwrap();
    let [_, n] = b.shape().try_into().unwrap();
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f64;
            for p in 0..k {
                acc += a.data()[i * k + p] as f64 * b.data()[p * n + j] as f64;
            }
            out[i * n + j] = acc as f32;
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}

/// Symmetric Hausdorff distance by exhaustive pairing.
pub fn hausdorff_brute(a: &[[f64; 3]], b: &[[f64; 3]], spacing: [f64; 3]) -> f64 {
    let dist = |p: &[f64; 3], q: &[f64; 3]| (0..3).map(|i| ((p[i] - q[i]) * spacing[i]).powi(2)).sum::<f64>().sqrt();
    let directed = |from: &[[f64; 3]], to: &[[f64; 3]]| {
        from.iter().map(|p| to.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

pub fn max_rel_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).abs() / (1.0 + y.abs() as f64)).fold(0.0, f64::max)
}

/// Worst relative deviation of `conv3d` from the loop oracle over random
/// shapes, strides and paddings.
pub fn conv3d_oracle_error(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let ci = rng.random_range(1..4);
        let co = rng.random_range(1..4);
        let k: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..4));
        let stride: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..3));
        let pad: [usize; 3] = std::array::from_fn(|i| rng.random_range(0..k[i]));
        let dims: [usize; 3] = std::array::from_fn(|i| rng.random_range(k[i]..k[i] + 6));
        let x = random(&mut rng, &[ci, dims[0], dims[1], dims[2]]);
        let w = random(&mut rng, &[co, ci, k[0], k[1], k[2]]);
        let b = random(&mut rng, &[co]);
        let spec = Conv3dSpec::new(stride, pad);
        let mut g = Graph::inference();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv3d(xv, wv, Some(bv), spec).unwrap();
        worst = worst.max(max_rel_diff(g.value(y), &conv3d_loops(&x, &w, Some(&b), spec)));
    }
    worst
}

/// Worst `|<conv(x), y> - <x, convᵀ(y)>|` relative to the product norms.
pub fn conv_adjoint_error(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (ci, co) = (rng.random_range(1..4), rng.random_range(1..4));
        let k: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..4));
        let stride: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..4));
        // Exact tiling: (extent - k) divisible by stride.
        let out: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..5));
        let dims: [usize; 3] = std::array::from_fn(|i| (out[i] - 1) * stride[i] + k[i]);
        let x = random(&mut rng, &[ci, dims[0], dims[1], dims[2]]);
        let w = random(&mut rng, &[co, ci, k[0], k[1], k[2]]);
        let y = random(&mut rng, &[co, out[0], out[1], out[2]]);
        let mut g = Graph::inference();
        let (xv, wv, yv) = (g.constant(x.clone()), g.constant(w), g.constant(y.clone()));
        let cx = g.conv3d(xv, wv, None, Conv3dSpec::new(stride, [0; 3])).unwrap();
        let ty = g.conv_transpose3d(yv, wv, None, stride).unwrap();
        let lhs = g.value(cx).dot(&y);
        let rhs = x.dot(g.value(ty));
        let scale = g.value(cx).dot(g.value(cx)).sqrt() * y.dot(&y).sqrt();
        worst = worst.max((lhs - rhs).abs() / scale.max(1e-12));
    }
    worst
}

pub fn matmul_oracle_error(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (m, k, n) = (rng.random_range(1..40), rng.random_range(1..40), rng.random_range(1..40));
        let a = random(&mut rng, &[m, k]);
        let b = random(&mut rng, &[k, n]);
        let mut g = Graph::inference();
        let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
        let c = g.matmul(av, bv).unwrap();
        worst = worst.max(max_rel_diff(g.value(c), &matmul_loops(&a, &b)));
    }
    worst
}

/// Worst absolute gap between `hausdorff` and the exhaustive oracle on random
/// point clouds with anisotropic spacing.
pub fn hausdorff_oracle_error(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let cloud = |rng: &mut ChaCha8Rng| -> Vec<[f64; 3]> {
            let n = rng.random_range(1..60);
            (0..n).map(|_| std::array::from_fn(|_| rng.random_range(0..32) as f64)).collect()
        };
        let (a, b) = (cloud(&mut rng), cloud(&mut rng));
        let spacing = [rng.random_range(0.2..2.0), rng.random_range(0.2..2.0), rng.random_range(0.2..2.0)];
        let got = microseg::metrics::hausdorff(&a, &b, spacing).unwrap();
        worst = worst.max((got - hausdorff_brute(&a, &b, spacing)).abs());
    }
    worst
}

/// With a single key, softmax weights are 1 and attention reduces to
/// `W_o (W_v v + b_v) + b_o`. Returns the largest gap to that hand trace.
pub fn one_token_attention_error() -> f64 {
    let (dim, heads) = (4, 2);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let attn = MultiHeadAttention::new(&mut Builder { store: &mut store, rng: &mut rng }, "attn", dim, heads).unwrap();
    let w_v = Tensor::new(vec![4, 4], vec![1., 0., 2., 0., 0., -1., 0., 1., 0.5, 0., 0., 0., 0., 0., 1., 3.]).unwrap();
    let b_v = Tensor::new(vec![4], vec![0.1, 0.2, -0.3, 0.0]).unwrap();
    let w_o = Tensor::new(vec![4, 4], vec![0., 1., 0., 0., 1., 0., 0., 0., 0., 0., 2., 0., 1., 1., 1., 1.]).unwrap();
    let b_o = Tensor::new(vec![4], vec![0.0, 0.5, 0.0, -1.0]).unwrap();
    store.set_value(attn.v.weight, w_v).unwrap();
    store.set_value(attn.v.bias.unwrap(), b_v).unwrap();
    store.set_value(attn.out.weight, w_o).unwrap();
    store.set_value(attn.out.bias.unwrap(), b_o).unwrap();

    // value = [1, 2, 3, 4]
    // W_v v + b_v = [1+6, -2+4, 0.5, 3+12] + b_v = [7.1, 2.2, 0.2, 15]
    // W_o h + b_o = [2.2, 7.1, 0.4, 24.5] + b_o = [2.2, 7.6, 0.4, 23.5]
    let expected = [2.2f32, 7.6, 0.4, 23.5];
    let mut g = Graph::inference();
    let q = g.constant(Tensor::new(vec![1, 4], vec![0.3, -2.0, 5.0, 1.0]).unwrap());
    let k = g.constant(Tensor::new(vec![1, 4], vec![-1.0, 0.0, 0.7, 2.0]).unwrap());
    let v = g.constant(Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let out = attn.forward(&mut g, &store, q, k, v).unwrap();
    g.value(out).data().iter().zip(expected).map(|(&a, b)| (a - b).abs() as f64).fold(0.0, f64::max)
}

/// Largest output gap between a soma model and a branch model built from the
/// same seed with every cross-attention skip collapsed to the identity.
pub fn rcam_collapse_gap(seed: u64) -> f32 {
    let cfg = ModelConfig::tiny();
    let soma = SegModel::new(&cfg, Stage::Soma, seed).unwrap();
    let mut branch = SegModel::new(&cfg, Stage::Branch, seed).unwrap();
    branch.collapse_skips();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let volume = Tensor::from_fn(vec![1, 16, 64, 64], |_| rng.random_range(0.0..1.0));
    let prompts = [[rng.random_range(0.0..64.0), rng.random_range(0.0..64.0), rng.random_range(0.0..16.0)]];
    let a = soma.predict(&volume, None).unwrap();
    let b = branch.predict(&volume, Some(&prompts)).unwrap();
    a.max_abs_diff(&b)
}

/// Distinct `(W, H, D)` multiples of the smallest valid input, at most six
/// times its volume (25 candidates). Dense attention over the patch tokens is
/// quadratic, so larger inputs do not fit in a few GB.
pub fn random_valid_dims(count: usize, seed: u64) -> Vec<Dims> {
    let mut pool: Vec<Dims> = Vec::new();
    for w in 1..=6 {
        for h in 1..=6 {
            for d in 1..=6 {
                if w * h * d <= 6 {
                    pool.push(Dims::new(64 * w, 64 * h, 16 * d));
                }
            }
        }
    }
    assert!(count <= pool.len(), "only {} candidate dims", pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::SliceRandom::shuffle(pool.as_mut_slice(), &mut rng);
    pool.truncate(count);
    pool
}

/// Run encoder and decoder on `dims` and check the pyramid and output laws.
pub fn shape_law(variant: Variant, dims: Dims) -> Result<(), String> {
    let cfg = ModelConfig::new(variant, dims).map_err(|e| e.to_string())?;
    let model = SegModel::new(&cfg, Stage::Soma, 0).map_err(|e| e.to_string())?;
    let e = cfg.embed_dim;
    let mut g = Graph::inference();
    let [d, h, w] = dims.dhw();
    let x = g.constant(Tensor::zeros(vec![1, d, h, w]));
    let pyramid = model.encoder.forward(&mut g, &model.store, x).map_err(|e| e.to_string())?;
    let shapes: Vec<Vec<usize>> = pyramid.levels.iter().map(|&v| g.shape(v).to_vec()).collect();
    let tokens: Vec<usize> = shapes.iter().map(|s| s[0]).collect();
    let channels: Vec<usize> = shapes.iter().map(|s| s[1]).collect();
    let voxels = d * h * w;
    let patch_voxels: usize = cfg.patch.dhw().iter().product();
    if tokens[0] * patch_voxels != voxels || channels[0] != e {
        return Err(format!("{variant:?} {dims:?}: level 0 {:?}", shapes[0]));
    }
    for l in 0..MERGES {
        if tokens[l] != 8 * tokens[l + 1] || channels[l + 1] != 2 * channels[l] {
            return Err(format!("{variant:?} {dims:?}: merge {l} {:?} -> {:?}", shapes[l], shapes[l + 1]));
        }
    }
    if tokens[0] != 512 * tokens[LEVELS - 1] || channels[LEVELS - 1] != 8 * e {
        return Err(format!("{variant:?} {dims:?}: final level {:?}", shapes[LEVELS - 1]));
    }
    let mut maps: [Var; LEVELS] = pyramid.levels;
    for (l, m) in maps.iter_mut().enumerate() {
        *m = tokens_to_volume(&mut g, identity_skip(*m), pyramid.grids[l]).map_err(|e| e.to_string())?;
    }
    let out = model.decoder.forward(&mut g, &model.store, &maps).map_err(|e| e.to_string())?;
    if g.shape(out) != [1, d, h, w] {
        return Err(format!("{variant:?} {dims:?}: decoder output {:?}", g.shape(out)));
    }
    Ok(())
}

fn scalar_loss(pred: &Tensor, f: impl FnOnce(&mut Graph, Var) -> microseg::Result<Var>) -> f64 {
    let mut g = Graph::inference();
    let p = g.constant(pred.clone());
    let l = f(&mut g, p).unwrap();
    g.value(l).item() as f64
}

/// A one-voxel-thick line along `x` at `(y, z)` in a `[1, 5, 9, 16]` volume.
fn tube(y: usize, z: usize) -> Tensor {
    Tensor::from_fn(vec![1, 5, 9, 16], |i| {
        let (iz, iy, ix) = (i / (9 * 16), (i / 16) % 9, i % 16);
        if iz == z && iy == y && (2..14).contains(&ix) {
            1.0
        } else {
            0.0
        }
    })
}

/// Named analytic loss identities with their observed deviation and tolerance.
pub fn loss_identities() -> Vec<(&'static str, f64, f64)> {
    let mut out = Vec::new();
    let half = Tensor::full(vec![1, 2, 2, 2], 0.5);
    let fg = Tensor::full(vec![1, 2, 2, 2], 1.0);
    let focal = scalar_loss(&half, |g, p| focal_loss(g, p, &fg, FocalParams { alpha: 0.25, gamma: 3.0 }));
    out.push(("focal(p_t = 0.5, α = 0.25, γ = 3) = 0.25·0.125·ln 2", (focal - 0.25 * 0.125 * std::f64::consts::LN_2).abs(), 1e-6));

    let a = Tensor::new(vec![1, 1, 1, 4], vec![1., 1., 0., 0.]).unwrap();
    let b = Tensor::new(vec![1, 1, 1, 4], vec![0., 0., 1., 1.]).unwrap();
    let c = Tensor::new(vec![1, 1, 1, 4], vec![0., 1., 1., 0.]).unwrap();
    out.push(("dice = 0 on equal masks", scalar_loss(&a, |g, p| dice_loss(g, p, &a)).abs(), 1e-6));
    out.push(("dice = 1 on disjoint masks", (scalar_loss(&a, |g, p| dice_loss(g, p, &b)) - 1.0).abs(), 1e-6));
    out.push(("dice = 0.5 on half overlap", (scalar_loss(&a, |g, p| dice_loss(g, p, &c)) - 0.5).abs(), 1e-6));

    let skel = SkeletonConfig::default();
    let (t1, t2) = (tube(2, 1), tube(6, 3));
    out.push(("clDice = 0 on equal tubes", scalar_loss(&t1, |g, p| cldice_loss(g, p, &t1, skel)).abs(), 1e-6));
    out.push(("clDice = 1 on disjoint tubes", (scalar_loss(&t1, |g, p| cldice_loss(g, p, &t2, skel)) - 1.0).abs(), 1e-6));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pred = Tensor::from_fn(vec![1, 5, 9, 16], |_| rng.random_range(0.05..0.95));
    let target = Tensor::from_fn(vec![1, 5, 9, 16], |_| if rng.random_bool(0.3) { 1.0 } else { 0.0 });
    let f = scalar_loss(&pred, |g, p| focal_loss(g, p, &target, FocalParams::default()));
    let d = scalar_loss(&pred, |g, p| dice_loss(g, p, &target));
    let cl = scalar_loss(&pred, |g, p| cldice_loss(g, p, &target, skel));
    let soma = scalar_loss(&pred, |g, p| soma_loss(g, p, &target));
    let branch = scalar_loss(&pred, |g, p| branch_loss(g, p, &target));
    out.push(("soma loss = 0.5·focal + 0.5·dice", (soma - (0.5 * f + 0.5 * d)).abs(), 1e-7));
    out.push(("branch loss = 0.2·focal + 0.6·dice + 0.2·clDice", (branch - (0.2 * f + 0.6 * d + 0.2 * cl)).abs(), 1e-7));
    out
}
