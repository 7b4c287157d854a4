//! Tiling and intensity normalisation of volumes.

use super::generate::VolumeSample;
use super::volume::Image;
use crate::error::{shape_err, Error, Result};
use crate::model::Dims;

/// Tiles whose foreground fraction falls below this are dropped in training mode.
pub const MIN_FOREGROUND_FRACTION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TileMode {
    /// Keep tiles with enough foreground.
    Training,
    /// Keep every tile.
    Inference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    /// Corner `(x, y, z)` in the source volume.
    pub origin: [usize; 3],
    pub sample: VolumeSample,
}

fn axis_starts(extent: usize, tile: usize, overlap: f64) -> Vec<usize> {
    if tile >= extent {
        return vec![0];
    }
    let stride = ((tile as f64 * (1.0 - overlap)).round() as usize).max(1);
    let mut starts: Vec<usize> = (0..).map(|i| i * stride).take_while(|s| s + tile < extent).collect();
    starts.push(extent - tile);
    starts.dedup();
    starts
}

/// Tile corners of a regular grid with the given overlap fraction; the last
/// tile on each axis is clamped to end at the boundary.
pub fn tile_origins(volume: Dims, tile: Dims, overlap: f64) -> Result<Vec<[usize; 3]>> {
    if tile.w > volume.w || tile.h > volume.h || tile.d > volume.d || tile.voxels() == 0 {
        return Err(shape_err("tile_volume", format!("tile {tile} does not fit volume {volume}")));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidArgument(format!("overlap {overlap} outside [0, 1)")));
    }
    let xs = axis_starts(volume.w, tile.w, overlap);
    let ys = axis_starts(volume.h, tile.h, overlap);
    let zs = axis_starts(volume.d, tile.d, overlap);
    let mut out = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                out.push([x, y, z]);
            }
        }
    }
    Ok(out)
}

/// Cut `sample` into tiles. Cells keep their mask in every tile; centroids
/// outside a tile are dropped from it together with their mask.
pub fn tile_volume(sample: &VolumeSample, tile: Dims, overlap: f64, mode: TileMode) -> Result<Vec<Tile>> {
    let mut tiles = Vec::new();
    for origin in tile_origins(sample.dims(), tile, overlap)? {
        let t = crop_sample(sample, origin, tile)?;
        if mode == TileMode::Training && foreground_fraction(&t) < MIN_FOREGROUND_FRACTION {
            continue;
        }
        tiles.push(Tile { origin, sample: t });
    }
    Ok(tiles)
}

/// Fraction of voxels covered by any cell.
pub fn foreground_fraction(sample: &VolumeSample) -> f64 {
    sample.foreground().count() as f64 / sample.dims().voxels() as f64
}

/// Window of a sample; cells whose centroid leaves the window are dropped.
pub fn crop_sample(sample: &VolumeSample, origin: [usize; 3], dims: Dims) -> Result<VolumeSample> {
    let image = sample.image.crop(origin, dims)?;
    let soma_mask = sample.soma_mask.crop(origin, dims)?;
    let (mut cell_masks, mut centroids) = (Vec::new(), Vec::new());
    for (m, c) in sample.cell_masks.iter().zip(&sample.centroids) {
        let local = [c[0] - origin[0] as f32, c[1] - origin[1] as f32, c[2] - origin[2] as f32];
        if dims.contains(local) {
            cell_masks.push(m.crop(origin, dims)?);
            centroids.push(local);
        }
    }
    Ok(VolumeSample { image, soma_mask, cell_masks, centroids, voxel_size: sample.voxel_size, seed: sample.seed })
}

/// Number of histogram bins used by [`histogram_equalize`].
pub const HISTOGRAM_BINS: usize = 256;

fn bin_of(v: f32) -> usize {
    ((v.clamp(0.0, 1.0) * HISTOGRAM_BINS as f32) as usize).min(HISTOGRAM_BINS - 1)
}

/// Map each voxel through the normalised cumulative histogram,
/// `(cdf(b) - cdf_min) / (n - cdf_min)`. Input with a single occupied bin is
/// returned unchanged.
pub fn histogram_equalize(img: &Image) -> Image {
    let mut hist = [0usize; HISTOGRAM_BINS];
    for &v in &img.data {
        hist[bin_of(v)] += 1;
    }
    if hist.iter().filter(|&&c| c > 0).count() <= 1 {
        return img.clone();
    }
    let mut cdf = [0usize; HISTOGRAM_BINS];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc;
    }
    let cdf_min = *cdf.iter().find(|&&c| c > 0).expect("nonempty histogram");
    let n = img.data.len();
    let denom = (n - cdf_min) as f32;
    img.map(|v| (cdf[bin_of(v)] - cdf_min) as f32 / denom)
}
