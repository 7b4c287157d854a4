//! Per-cell windows for the branch stage.

use rand::Rng;

use super::generate::VolumeSample;
use super::volume::{Image, Mask};
use crate::error::{shape_err, Error, Result};
use crate::model::Dims;

/// Fraction of the crop extent by which the window centre may be jittered.
pub const CROP_JITTER: f32 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct CellCrop {
    /// Corner `(x, y, z)` of the window in the source volume.
    pub origin: [usize; 3],
    pub image: Image,
    /// Mask of the target cell only.
    pub target: Mask,
    /// Target soma voxels inside the window.
    pub soma: Mask,
    /// Target centroid in window coordinates.
    pub prompt: [f32; 3],
}

impl CellCrop {
    /// As a one-cell sample, so it can go through [`super::augment`].
    pub fn to_sample(&self, voxel_size: [f64; 3], seed: u64) -> VolumeSample {
        VolumeSample {
            image: self.image.clone(),
            soma_mask: self.soma.clone(),
            cell_masks: vec![self.target.clone()],
            centroids: vec![self.prompt],
            voxel_size,
            seed,
        }
    }
}

/// Window origin along one axis: centred on `c + shift`, clamped to the volume.
fn axis_origin(c: f32, shift: f32, crop: usize, extent: usize) -> usize {
    let start = (c + shift - (crop as f32 - 1.0) / 2.0).round();
    start.clamp(0.0, (extent - crop) as f32) as usize
}

/// Window of `crop` voxels around `center`, jittered by `shift`, clamped.
pub fn window_origin(center: [f32; 3], shift: [f32; 3], crop: Dims, volume: Dims) -> Result<[usize; 3]> {
    if crop.w > volume.w || crop.h > volume.h || crop.d > volume.d {
        return Err(shape_err("crop", format!("crop {crop} exceeds volume {volume}")));
    }
    Ok([
        axis_origin(center[0], shift[0], crop.w, volume.w),
        axis_origin(center[1], shift[1], crop.h, volume.h),
        axis_origin(center[2], shift[2], crop.d, volume.d),
    ])
}

/// Crop around cell `cell`, with uniform jitter of up to ±`jitter`·extent per
/// axis (pass 0 for a centred window). The label keeps only the target cell.
pub fn crop_around_cell(sample: &VolumeSample, cell: usize, crop: Dims, jitter: f32, rng: &mut impl Rng) -> Result<CellCrop> {
    let Some(&c) = sample.centroids.get(cell) else {
        return Err(Error::InvalidArgument(format!("cell index {cell} out of range ({} cells)", sample.centroids.len())));
    };
    let ext = [crop.w as f32, crop.h as f32, crop.d as f32];
    let mut shift = [0.0f32; 3];
    if jitter > 0.0 {
        for (s, e) in shift.iter_mut().zip(ext) {
            *s = rng.random_range(-jitter * e..=jitter * e);
        }
    }
    let mut origin = window_origin(c, shift, crop, sample.dims())?;
    // the jitter may push the centroid out of a small window; fall back to centred
    let inside = |o: [usize; 3]| crop.contains([c[0] - o[0] as f32, c[1] - o[1] as f32, c[2] - o[2] as f32]);
    if !inside(origin) {
        origin = window_origin(c, [0.0; 3], crop, sample.dims())?;
    }
    let target = sample.cell_masks[cell].crop(origin, crop)?;
    let mut soma = sample.soma_mask.crop(origin, crop)?;
    for (s, t) in soma.data.iter_mut().zip(&target.data) {
        *s &= *t;
    }
    Ok(CellCrop {
        origin,
        image: sample.image.crop(origin, crop)?,
        target,
        soma,
        prompt: [c[0] - origin[0] as f32, c[1] - origin[1] as f32, c[2] - origin[2] as f32],
    })
}
