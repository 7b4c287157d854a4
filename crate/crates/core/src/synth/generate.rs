//! Microglia-like phantoms: ellipsoidal somas with tapering, bifurcating
//! random-walk branches, rendered with blur, background and noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::volume::{Image, Mask, Volume};
use crate::error::{config_err, Error, Result};
use crate::exec::Exec;
use crate::model::Dims;

/// Generator settings. Ranges are inclusive `[min, max]`; lengths and radii
/// are in xy voxels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub dims: Dims,
    pub cells: [usize; 2],
    pub soma_radius: [f32; 2],
    pub branches: [usize; 2],
    pub branch_length: [f32; 2],
    pub branch_radius: [f32; 2],
    /// Chance per unit of branch length of spawning a child branch.
    pub branch_probability: f32,
    /// Size of a z voxel relative to an xy voxel, inverted (xy / z spacing).
    pub z_aspect: f32,
    /// Minimum distance between soma centres, in xy voxels. The default
    /// exceeds twice the largest soma radius, so somas never touch.
    pub min_separation: f32,
    pub brightness: [f32; 2],
    /// Branch intensity relative to the soma of the same cell.
    pub branch_contrast: f32,
    pub noise_sigma: f32,
    /// Signal-dependent noise: σ = factor·sqrt(signal).
    pub signal_noise: f32,
    pub blur_sigma: f32,
    pub background: f32,
    pub background_gradient: f32,
    pub voxel_size: [f64; 3],
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dims: Dims::new(64, 64, 16),
            cells: [4, 6],
            soma_radius: [5.0, 7.0],
            branches: [5, 8],
            branch_length: [16.0, 32.0],
            branch_radius: [1.6, 2.4],
            branch_probability: 0.1,
            z_aspect: 0.4 / 1.1,
            min_separation: 16.0,
            brightness: [0.6, 1.0],
            branch_contrast: 0.75,
            noise_sigma: 0.04,
            signal_noise: 0.05,
            blur_sigma: 0.8,
            background: 0.08,
            background_gradient: 0.05,
            voxel_size: [0.4, 0.4, 1.1],
            max_attempts: 1000,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        fn range<T: PartialOrd + Copy + std::fmt::Debug>(name: &str, r: [T; 2]) -> Result<()> {
            if r[0] > r[1] {
                return Err(config_err(name, format!("empty range {r:?}")));
            }
            Ok(())
        }
        range("cells", self.cells)?;
        range("soma_radius", self.soma_radius)?;
        range("branches", self.branches)?;
        range("branch_length", self.branch_length)?;
        range("branch_radius", self.branch_radius)?;
        range("brightness", self.brightness)?;
        let d = self.dims;
        if d.voxels() == 0 {
            return Err(config_err("dims", "extents must be positive"));
        }
        if self.soma_radius[0] <= 0.0 || 2.0 * self.soma_radius[1] >= d.w.min(d.h) as f32 {
            return Err(config_err("soma_radius", format!("{:?} does not fit in {d}", self.soma_radius)));
        }
        if 2.0 * self.soma_radius[1] * self.z_aspect >= d.d as f32 {
            return Err(config_err("soma_radius", format!("{:?} is too deep for {d}", self.soma_radius)));
        }
        if self.branch_radius[0] <= 0.0 || self.branch_length[0] <= 0.0 {
            return Err(config_err("branch_radius", "branch sizes must be positive"));
        }
        if !(0.0..=1.0).contains(&self.branch_probability) {
            return Err(config_err("branch_probability", "must lie in [0, 1]"));
        }
        if self.z_aspect.is_nan() || self.z_aspect <= 0.0 {
            return Err(config_err("z_aspect", "must be positive"));
        }
        if self.brightness[0] < 0.0 || self.brightness[1] > 1.0 {
            return Err(config_err("brightness", "must lie in [0, 1]"));
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("signal_noise", self.signal_noise),
            ("blur_sigma", self.blur_sigma),
            ("background", self.background),
            ("background_gradient", self.background_gradient),
            ("min_separation", self.min_separation),
        ] {
            if v.is_nan() || v < 0.0 {
                return Err(config_err(name, format!("{v} is negative")));
            }
        }
        Ok(())
    }
}

/// One generated cell inside a volume.
#[derive(Clone, Debug)]
pub struct Cell {
    pub mask: Mask,
    pub soma: Mask,
    /// Soma centre `(x, y, z)` in voxels.
    pub centroid: [f32; 3],
    pub primary_branches: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeSample {
    pub image: Image,
    pub soma_mask: Mask,
    pub cell_masks: Vec<Mask>,
    pub centroids: Vec<[f32; 3]>,
    pub voxel_size: [f64; 3],
    pub seed: u64,
}

impl VolumeSample {
    pub fn dims(&self) -> Dims {
        self.image.dims
    }

    pub fn foreground(&self) -> Mask {
        let mut u = Mask::zeros(self.dims());
        for m in &self.cell_masks {
            u.union_with(m);
        }
        u
    }
}

fn uniform(rng: &mut impl Rng, r: [f32; 2]) -> f32 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

/// Mark voxels of the ellipsoid with xy radius `r` and z radius `rz`
/// around `p`, plus the voxel nearest to `p` so thin tubes stay connected.
fn stamp(mask: &mut Mask, p: [f32; 3], r: f32, rz: f32) {
    let d = mask.dims;
    let span = |c: f32, rad: f32, n: usize| {
        let lo = (c - rad).floor().max(0.0) as isize;
        let hi = ((c + rad).ceil() as isize).min(n as isize - 1);
        lo..=hi
    };
    for z in span(p[2], rz, d.d) {
        for y in span(p[1], r, d.h) {
            for x in span(p[0], r, d.w) {
                let q = ((x as f32 - p[0]) / r).powi(2) + ((y as f32 - p[1]) / r).powi(2) + ((z as f32 - p[2]) / rz).powi(2);
                if q <= 1.0 {
                    let i = mask.index(x as usize, y as usize, z as usize);
                    mask.data[i] = 1;
                }
            }
        }
    }
    let n = p.map(|c| c.round() as isize);
    if n.iter().all(|&c| c >= 0) && (n[0] as usize) < d.w && (n[1] as usize) < d.h && (n[2] as usize) < d.d {
        let i = mask.index(n[0] as usize, n[1] as usize, n[2] as usize);
        mask.data[i] = 1;
    }
}

fn normalize(v: [f32; 3]) -> [f32; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-6);
    v.map(|c| c / n)
}

fn random_direction(rng: &mut impl Rng) -> [f32; 3] {
    let n = Normal::new(0.0f32, 1.0).unwrap();
    normalize([n.sample(rng), n.sample(rng), n.sample(rng)])
}

struct Walk {
    pos: [f32; 3],
    dir: [f32; 3],
    radius: f32,
    length: f32,
    depth: usize,
}

/// Persistent random walk with linear taper; children spawn with
/// probability `branch_probability` per unit length, up to depth 2.
fn grow_branch(mask: &mut Mask, rng: &mut impl Rng, cfg: &SynthConfig, root: Walk) {
    const STEP: f32 = 0.5;
    let turn = Normal::new(0.0f32, 0.15).unwrap();
    let fork = Normal::new(0.0f32, 0.8).unwrap();
    let mut stack = vec![root];
    while let Some(w) = stack.pop() {
        let (mut p, mut u) = (w.pos, w.dir);
        let steps = (w.length / STEP).ceil() as usize;
        for s in 0..steps {
            let t = s as f32 / steps.max(1) as f32;
            let r = w.radius * (1.0 - 0.5 * t);
            stamp(mask, p, r, (r * cfg.z_aspect).max(0.75));
            u = normalize([u[0] + turn.sample(rng), u[1] + turn.sample(rng), u[2] + turn.sample(rng)]);
            p = [p[0] + STEP * u[0], p[1] + STEP * u[1], p[2] + STEP * u[2] * cfg.z_aspect];
            let d = cfg.dims;
            if p[0] < -0.5 || p[1] < -0.5 || p[2] < -0.5 || p[0] > d.w as f32 - 0.5 || p[1] > d.h as f32 - 0.5 || p[2] > d.d as f32 - 0.5 {
                break;
            }
            if w.depth < 2 && rng.random::<f32>() < cfg.branch_probability * STEP {
                let remaining = w.length * (1.0 - t);
                let child_dir = normalize([u[0] + fork.sample(rng), u[1] + fork.sample(rng), u[2]]);
                stack.push(Walk {
                    pos: p,
                    dir: child_dir,
                    radius: r * 0.8,
                    length: remaining * rng.random_range(0.4..0.8),
                    depth: w.depth + 1,
                });
            }
        }
    }
}

/// One cell with its soma centred on the voxel `center`.
pub fn generate_cell(rng: &mut impl Rng, cfg: &SynthConfig, center: [usize; 3]) -> Cell {
    let dims = cfg.dims;
    let c = center.map(|v| v as f32);
    let r = uniform(rng, cfg.soma_radius);
    let jitter = |rng: &mut dyn rand::RngCore| 1.0 + rng.random_range(-0.15f32..=0.15);
    let radii = [r * jitter(rng), r * jitter(rng), (r * cfg.z_aspect * jitter(rng)).max(0.75)];
    let mut soma = Mask::zeros(dims);
    for z in 0..dims.d {
        for y in 0..dims.h {
            for x in 0..dims.w {
                let q = ((x as f32 - c[0]) / radii[0]).powi(2)
                    + ((y as f32 - c[1]) / radii[1]).powi(2)
                    + ((z as f32 - c[2]) / radii[2]).powi(2);
                if q <= 1.0 {
                    let i = soma.index(x, y, z);
                    soma.data[i] = 1;
                }
            }
        }
    }
    let i = soma.index(center[0], center[1], center[2]);
    soma.data[i] = 1;
    let mut mask = soma.clone();
    let n = rng.random_range(cfg.branches[0]..=cfg.branches[1]);
    for _ in 0..n {
        let mut u = random_direction(rng);
        u[2] *= 0.5;
        let u = normalize(u);
        // rooted at the soma centre so the tube is connected to it
        let length = uniform(rng, cfg.branch_length) + r;
        let radius = uniform(rng, cfg.branch_radius);
        grow_branch(&mut mask, rng, cfg, Walk { pos: c, dir: u, radius, length, depth: 0 });
    }
    Cell { mask, soma, centroid: c, primary_branches: n }
}

/// Place soma centres uniformly, at least `min_separation` apart and at least
/// one soma radius from the xy border.
pub fn place_somas(rng: &mut impl Rng, cfg: &SynthConfig, count: usize) -> Result<Vec<[usize; 3]>> {
    let d = cfg.dims;
    let margin = cfg.soma_radius[1].ceil() as usize;
    let zmargin = ((cfg.soma_radius[1] * cfg.z_aspect).ceil() as usize).min((d.d - 1) / 2);
    let mut centers: Vec<[usize; 3]> = Vec::with_capacity(count);
    let mut attempts = 0;
    while centers.len() < count {
        attempts += 1;
        if attempts > cfg.max_attempts * count.max(1) {
            return Err(Error::InvalidArgument(format!(
                "could not place {count} somas {} voxels apart in {d} after {} attempts",
                cfg.min_separation,
                attempts - 1
            )));
        }
        let p = [rng.random_range(margin..d.w - margin), rng.random_range(margin..d.h - margin), rng.random_range(zmargin..d.d - zmargin)];
        let far = centers.iter().all(|q| {
            let dz = (p[2] as f32 - q[2] as f32) / cfg.z_aspect;
            let dist = ((p[0] as f32 - q[0] as f32).powi(2) + (p[1] as f32 - q[1] as f32).powi(2) + dz * dz).sqrt();
            dist >= cfg.min_separation
        });
        if far {
            centers.push(p);
        }
    }
    Ok(centers)
}

/// Full labelled volume: `K` cells (drawn from the configured range) and a
/// rendered image.
pub fn generate_volume(rng: &mut impl Rng, cfg: &SynthConfig) -> Result<VolumeSample> {
    let k = rng.random_range(cfg.cells[0]..=cfg.cells[1]);
    generate_volume_with(rng, cfg, k)
}

/// As [`generate_volume`] with an explicit cell count.
pub fn generate_volume_with(rng: &mut impl Rng, cfg: &SynthConfig, cells: usize) -> Result<VolumeSample> {
    cfg.validate()?;
    let centers = place_somas(rng, cfg, cells)?;
    let cells: Vec<Cell> = centers.iter().map(|&c| generate_cell(rng, cfg, c)).collect();
    let image = render_intensity(&cells, cfg, rng);
    let mut soma_mask = Mask::zeros(cfg.dims);
    for c in &cells {
        soma_mask.union_with(&c.soma);
    }
    Ok(VolumeSample {
        image,
        soma_mask,
        centroids: cells.iter().map(|c| c.centroid).collect(),
        cell_masks: cells.into_iter().map(|c| c.mask).collect(),
        voxel_size: cfg.voxel_size,
        seed: cfg.seed,
    })
}

/// Separable Gaussian blur with per-axis σ `(x, y, z)`; edges are clamped.
pub fn gaussian_blur(img: &mut Image, sigma: [f32; 3]) {
    let d = img.dims;
    let extents = [d.w, d.h, d.d];
    let strides = [1, d.w, d.w * d.h];
    for axis in 0..3 {
        let s = sigma[axis];
        if s <= 0.0 || extents[axis] < 2 {
            continue;
        }
        let rad = (3.0 * s).ceil() as isize;
        let kernel: Vec<f32> = (-rad..=rad).map(|i| (-(i * i) as f32 / (2.0 * s * s)).exp()).collect();
        let norm: f32 = kernel.iter().sum();
        let kernel: Vec<f32> = kernel.iter().map(|k| k / norm).collect();
        let (n, stride) = (extents[axis] as isize, strides[axis]);
        let src = img.data.clone();
        for base in 0..src.len() {
            let pos = (base / stride) as isize % n;
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                let q = (pos + j as isize - rad).clamp(0, n - 1);
                acc += k * src[(base as isize + (q - pos) * stride as isize) as usize];
            }
            img.data[base] = acc;
        }
    }
}

/// Per-cell brightness, blur, low-frequency background and noise, clipped to `[0, 1]`.
pub fn render_intensity(cells: &[Cell], cfg: &SynthConfig, rng: &mut impl Rng) -> Image {
    let dims = cfg.dims;
    let mut img = Image::zeros(dims);
    for c in cells {
        let b = uniform(rng, cfg.brightness);
        for i in 0..img.data.len() {
            let v = if c.soma.data[i] != 0 {
                b
            } else if c.mask.data[i] != 0 {
                b * cfg.branch_contrast
            } else {
                0.0
            };
            img.data[i] = img.data[i].max(v);
        }
    }
    gaussian_blur(&mut img, [cfg.blur_sigma, cfg.blur_sigma, cfg.blur_sigma * cfg.z_aspect]);
    let angle = rng.random_range(0.0..std::f32::consts::TAU);
    let (gx, gy) = (angle.cos(), angle.sin());
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    for z in 0..dims.d {
        for y in 0..dims.h {
            for x in 0..dims.w {
                let i = img.index(x, y, z);
                let u = (x as f32 + 0.5) / dims.w as f32 - 0.5;
                let v = (y as f32 + 0.5) / dims.h as f32 - 0.5;
                let bg = cfg.background + cfg.background_gradient * (gx * u + gy * v);
                let signal = img.data[i];
                let mut noise = 0.0;
                if cfg.noise_sigma > 0.0 {
                    noise += cfg.noise_sigma * normal.sample(rng);
                }
                if cfg.signal_noise > 0.0 {
                    noise += cfg.signal_noise * signal.sqrt() * normal.sample(rng);
                }
                img.data[i] = (signal + bg + noise).clamp(0.0, 1.0);
            }
        }
    }
    img
}

/// Seed of volume `index` in a dataset with base seed `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `count` volumes, each from its own derived seed, so the result does not
/// depend on the execution policy.
pub fn generate_dataset(cfg: &SynthConfig, count: usize, exec: Exec) -> Result<Vec<VolumeSample>> {
    cfg.validate()?;
    exec.map_range(count, |i| {
        let seed = derive_seed(cfg.seed, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = generate_volume(&mut rng, cfg)?;
        s.seed = seed;
        Ok(s)
    })
    .into_iter()
    .collect()
}

impl<T: Copy + Default> Volume<T> {
    /// Voxel indices of nonzero-valued entries.
    pub fn nonzero_indices(&self) -> Vec<usize>
    where
        T: PartialEq,
    {
        self.data.iter().enumerate().filter(|(_, v)| **v != T::default()).map(|(i, _)| i).collect()
    }
}

/// Axis-aligned bounding box `(min, max)` of a mask, inclusive, `(x, y, z)`.
pub fn bounding_box(mask: &Mask) -> Option<([usize; 3], [usize; 3])> {
    let d = mask.dims;
    let mut bb: Option<([usize; 3], [usize; 3])> = None;
    for i in mask.nonzero_indices() {
        let p = [i % d.w, i / d.w % d.h, i / (d.w * d.h)];
        bb = Some(match bb {
            None => (p, p),
            Some((lo, hi)) => ([lo[0].min(p[0]), lo[1].min(p[1]), lo[2].min(p[2])], [hi[0].max(p[0]), hi[1].max(p[1]), hi[2].max(p[2])]),
        });
    }
    bb
}

/// Whether the bounding boxes of two masks intersect.
pub fn boxes_overlap(a: &Mask, b: &Mask) -> bool {
    match (bounding_box(a), bounding_box(b)) {
        (Some((alo, ahi)), Some((blo, bhi))) => (0..3).all(|k| alo[k] <= bhi[k] && blo[k] <= ahi[k]),
        _ => false,
    }
}

/// Two-cell volume whose cells have overlapping bounding boxes, found by
/// rejection sampling.
pub fn generate_overlap_volume(rng: &mut impl Rng, cfg: &SynthConfig, max_tries: usize) -> Result<VolumeSample> {
    for _ in 0..max_tries {
        let s = generate_volume_with(rng, cfg, 2)?;
        if boxes_overlap(&s.cell_masks[0], &s.cell_masks[1]) {
            return Ok(s);
        }
    }
    Err(Error::InvalidArgument(format!("no overlapping two-cell volume in {max_tries} tries")))
}

impl SynthConfig {
    /// Two or three cells packed closely in a wider field, so branches of
    /// neighbouring cells interleave.
    pub fn crowded(dims: Dims) -> Self {
        Self { dims, cells: [2, 3], branch_length: [10.0, 22.0], ..Self::default() }
    }
}
