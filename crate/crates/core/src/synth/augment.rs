//! Spatial and intensity augmentation. Spatial ops move image and masks
//! together (masks by nearest neighbour); intensity ops touch the image only.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::generate::{gaussian_blur, VolumeSample};
use super::volume::{Image, Mask, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentOp {
    Flip,
    Affine,
    Noise,
    Blur,
    Gamma,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 5] = [AugmentOp::Flip, AugmentOp::Affine, AugmentOp::Noise, AugmentOp::Blur, AugmentOp::Gamma];
}

/// Parameter ranges of the random augmentations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    pub scale: [f32; 2],
    pub noise_sigma: f32,
    pub blur_sigma: f32,
    pub gamma: [f32; 2],
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self { scale: [0.9, 1.1], noise_sigma: 0.03, blur_sigma: 0.8, gamma: [0.7, 1.5] }
    }
}

/// Axis of a volume: 0 = x, 1 = y, 2 = z.
pub fn flip<T: Copy + Default>(v: &Volume<T>, axis: usize) -> Volume<T> {
    let d = v.dims;
    let mut out = Volume::zeros(d);
    for z in 0..d.d {
        for y in 0..d.h {
            for x in 0..d.w {
                let (sx, sy, sz) = match axis {
                    0 => (d.w - 1 - x, y, z),
                    1 => (x, d.h - 1 - y, z),
                    _ => (x, y, d.d - 1 - z),
                };
                let i = out.index(x, y, z);
                out.data[i] = v.get(sx, sy, sz);
            }
        }
    }
    out
}

/// Flip every volume of the sample along `axis` and mirror the centroids.
pub fn flip_sample(s: &VolumeSample, axis: usize) -> VolumeSample {
    let ext = [s.dims().w, s.dims().h, s.dims().d];
    VolumeSample {
        image: flip(&s.image, axis),
        soma_mask: flip(&s.soma_mask, axis),
        cell_masks: s.cell_masks.iter().map(|m| flip(m, axis)).collect(),
        centroids: s
            .centroids
            .iter()
            .map(|c| {
                let mut c = *c;
                c[axis] = (ext[axis] - 1) as f32 - c[axis];
                c
            })
            .collect(),
        voxel_size: s.voxel_size,
        seed: s.seed,
    }
}

/// In-plane rotation by `theta` and isotropic xy scale `scale` about the
/// volume centre. Returns the inverse map from output to source coordinates.
fn inverse_affine(dims: crate::model::Dims, theta: f32, scale: f32) -> impl Fn(f32, f32) -> (f32, f32) {
    let (cx, cy) = ((dims.w as f32 - 1.0) / 2.0, (dims.h as f32 - 1.0) / 2.0);
    let (c, s) = (theta.cos(), theta.sin());
    move |x, y| {
        let (u, v) = ((x - cx) / scale, (y - cy) / scale);
        (c * u + s * v + cx, -s * u + c * v + cy)
    }
}

fn resample_image(img: &Image, theta: f32, scale: f32) -> Image {
    let d = img.dims;
    let inv = inverse_affine(d, theta, scale);
    let mut out = Image::zeros(d);
    for z in 0..d.d {
        for y in 0..d.h {
            for x in 0..d.w {
                let (sx, sy) = inv(x as f32, y as f32);
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (sx - x0, sy - y0);
                let mut acc = 0.0;
                for (dx, wx) in [(0isize, 1.0 - fx), (1, fx)] {
                    for (dy, wy) in [(0isize, 1.0 - fy), (1, fy)] {
                        // constant (zero) padding outside the volume
                        let v = img.get_checked(x0 as isize + dx, y0 as isize + dy, z as isize).unwrap_or(0.0);
                        acc += wx * wy * v;
                    }
                }
                let i = out.index(x, y, z);
                out.data[i] = acc;
            }
        }
    }
    out
}

fn resample_mask(m: &Mask, theta: f32, scale: f32) -> Mask {
    let d = m.dims;
    let inv = inverse_affine(d, theta, scale);
    let mut out = Mask::zeros(d);
    for z in 0..d.d {
        for y in 0..d.h {
            for x in 0..d.w {
                let (sx, sy) = inv(x as f32, y as f32);
                let i = out.index(x, y, z);
                out.data[i] = m.get_checked(sx.round() as isize, sy.round() as isize, z as isize).unwrap_or(0);
            }
        }
    }
    out
}

/// Voxel of `mask` nearest to `p`, preferring voxels also in `prefer`.
fn snap(p: [f32; 3], mask: &Mask, prefer: &Mask) -> Option<[f32; 3]> {
    let d = mask.dims;
    let mut best: Option<(f32, bool, [f32; 3])> = None;
    for z in 0..d.d {
        for y in 0..d.h {
            for x in 0..d.w {
                let i = mask.index(x, y, z);
                if mask.data[i] == 0 {
                    continue;
                }
                let pref = prefer.data[i] != 0;
                let dist = (x as f32 - p[0]).powi(2) + (y as f32 - p[1]).powi(2) + (z as f32 - p[2]).powi(2);
                let better = match best {
                    None => true,
                    Some((bd, bp, _)) => (pref && !bp) || (pref == bp && dist < bd),
                };
                if better {
                    best = Some((dist, pref, [x as f32, y as f32, z as f32]));
                }
            }
        }
    }
    best.map(|b| b.2)
}

/// Rotate about the depth axis and rescale in-plane. Centroids are mapped
/// forward and snapped onto their cell's soma; cells that leave the volume
/// entirely are dropped.
pub fn affine_sample(s: &VolumeSample, theta: f32, scale: f32) -> VolumeSample {
    let d = s.dims();
    let (cx, cy) = ((d.w as f32 - 1.0) / 2.0, (d.h as f32 - 1.0) / 2.0);
    let (c, sn) = (theta.cos(), theta.sin());
    let soma_mask = resample_mask(&s.soma_mask, theta, scale);
    let (mut cell_masks, mut centroids) = (Vec::new(), Vec::new());
    for (m, p) in s.cell_masks.iter().zip(&s.centroids) {
        let m2 = resample_mask(m, theta, scale);
        let (u, v) = (p[0] - cx, p[1] - cy);
        let fwd = [scale * (c * u - sn * v) + cx, scale * (sn * u + c * v) + cy, p[2]];
        if let Some(q) = snap(fwd, &m2, &soma_mask) {
            cell_masks.push(m2);
            centroids.push(q);
        }
    }
    VolumeSample { image: resample_image(&s.image, theta, scale), soma_mask, cell_masks, centroids, voxel_size: s.voxel_size, seed: s.seed }
}

/// `v^gamma` voxelwise; keeps `[0, 1]` and voxel order.
pub fn apply_gamma(img: &Image, gamma: f32) -> Image {
    img.map(|v| v.clamp(0.0, 1.0).powf(gamma))
}

pub fn add_noise(img: &Image, sigma: f32, rng: &mut impl Rng) -> Image {
    let n = Normal::new(0.0f32, sigma.max(0.0)).expect("finite sigma");
    let mut out = img.clone();
    for v in &mut out.data {
        *v = (*v + n.sample(rng)).clamp(0.0, 1.0);
    }
    out
}

/// Apply each op in `ops` once, in the canonical order flip, affine, noise,
/// blur, gamma, with parameters drawn from `params`.
pub fn augment(sample: &VolumeSample, rng: &mut impl Rng, ops: &[AugmentOp], params: &AugmentParams) -> VolumeSample {
    let mut s = sample.clone();
    let has = |op| ops.contains(&op);
    if has(AugmentOp::Flip) {
        for axis in 0..3 {
            if rng.random_bool(0.5) {
                s = flip_sample(&s, axis);
            }
        }
    }
    if has(AugmentOp::Affine) {
        let theta = rng.random_range(-std::f32::consts::PI..std::f32::consts::PI);
        let scale = rng.random_range(params.scale[0]..=params.scale[1]);
        s = affine_sample(&s, theta, scale);
    }
    if has(AugmentOp::Noise) {
        let sigma = rng.random_range(0.0..=params.noise_sigma);
        s.image = add_noise(&s.image, sigma, rng);
    }
    if has(AugmentOp::Blur) {
        let sigma = rng.random_range(0.0..=params.blur_sigma);
        gaussian_blur(&mut s.image, [sigma, sigma, 0.0]);
    }
    if has(AugmentOp::Gamma) {
        let (lo, hi) = (params.gamma[0].ln(), params.gamma[1].ln());
        let gamma = rng.random_range(lo..=hi).exp();
        s.image = apply_gamma(&s.image, gamma);
    }
    s
}
