use crate::components::label_components;
use crate::error::{shape_err, Error, Result};
use crate::exec::Exec;
use crate::model::{Dims, SegModel};
use crate::synth::{histogram_equalize, tile_origins, window_origin, Image, Mask};

/// Binarisation threshold for probabilities.
pub const THRESHOLD: f32 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferOptions {
    /// Overlap fraction between neighbouring tiles.
    pub overlap: f64,
    /// Histogram-equalise each tile or crop before the forward pass.
    pub equalize: bool,
    pub exec: Exec,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self { overlap: 0.5, equalize: true, exec: Exec::default() }
    }
}

fn check_window(model: &SegModel, window: Dims) -> Result<()> {
    if window != model.config().input_dims {
        return Err(shape_err("inference", format!("window {window} differs from the model input {}", model.config().input_dims)));
    }
    Ok(())
}

fn forward_window(model: &SegModel, img: &Image, prompts: Option<&[[f32; 3]]>, equalize: bool) -> Result<Image> {
    let input = if equalize { histogram_equalize(img) } else { img.clone() };
    Image::from_tensor(&model.predict(&input.to_tensor(), prompts)?)
}

/// Per-tile forward passes blended by the arithmetic mean wherever tiles overlap.
pub fn sliding_window_infer(model: &SegModel, volume: &Image, tile: Dims, opts: InferOptions) -> Result<Image> {
    check_window(model, tile)?;
    let origins = tile_origins(volume.dims, tile, opts.overlap)?;
    let preds = opts.exec.map(&origins, |_, &o| forward_window(model, &volume.crop(o, tile)?, None, opts.equalize));
    let mut sum = Image::zeros(volume.dims);
    let mut weight = Image::zeros(volume.dims);
    for (o, p) in origins.iter().zip(preds) {
        accumulate(&mut sum, &mut weight, *o, &p?);
    }
    for (s, w) in sum.data.iter_mut().zip(&weight.data) {
        *s /= w;
    }
    Ok(sum)
}

/// Add `tile` into the running sum and count maps at `origin`.
pub fn accumulate(sum: &mut Image, weight: &mut Image, origin: [usize; 3], tile: &Image) {
    let d = tile.dims;
    for z in 0..d.d {
        for y in 0..d.h {
            for x in 0..d.w {
                let i = sum.index(origin[0] + x, origin[1] + y, origin[2] + z);
                sum.data[i] += tile.get(x, y, z);
                weight.data[i] += 1.0;
            }
        }
    }
}

pub fn binarize(prob: &Image, threshold: f32) -> Mask {
    Mask { dims: prob.dims, data: prob.data.iter().map(|&p| (p > threshold) as u8).collect() }
}

/// Centroids `(x, y, z)`, rounded to voxels, of the 26-connected components
/// of `prob > threshold` with at least `min_size` voxels.
pub fn extract_somas(prob: &Image, threshold: f32, min_size: usize) -> Result<Vec<[usize; 3]>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1)")));
    }
    let mask: Vec<bool> = prob.data.iter().map(|&p| p > threshold).collect();
    let (_, comps) = label_components(&mask, prob.dims.dhw());
    Ok(comps.iter().filter(|c| c.size >= min_size).map(|c| c.centroid.map(|v| v.round() as usize)).collect())
}

/// Crop origin and in-crop prompt for a soma at `point`.
pub fn prompt_window(volume: Dims, point: [f32; 3], crop: Dims) -> Result<([usize; 3], [f32; 3])> {
    if !volume.contains(point) {
        return Err(Error::InvalidArgument(format!("soma point {point:?} outside volume {volume}")));
    }
    let o = window_origin(point, [0.0; 3], crop, volume)?;
    Ok((o, [point[0] - o[0] as f32, point[1] - o[1] as f32, point[2] - o[2] as f32]))
}

/// Segment the cell at `point` with the branch model: a window centred on the
/// point (clamped to the volume), one prompted forward pass, and the
/// thresholded mask placed back into a volume-sized canvas.
pub fn segment_cell(model: &SegModel, volume: &Image, point: [f32; 3], crop: Dims, equalize: bool) -> Result<Mask> {
    check_window(model, crop)?;
    let (origin, prompt) = prompt_window(volume.dims, point, crop)?;
    let prob = forward_window(model, &volume.crop(origin, crop)?, Some(&[prompt]), equalize)?;
    let mut canvas = Mask::zeros(volume.dims);
    canvas.paste(origin, &binarize(&prob, THRESHOLD))?;
    Ok(canvas)
}

/// [`segment_cell`] for every point, in parallel over points.
pub fn segment_cells(model: &SegModel, volume: &Image, points: &[[f32; 3]], crop: Dims, opts: InferOptions) -> Result<Vec<Mask>> {
    opts.exec.map(points, |_, &p| segment_cell(model, volume, p, crop, opts.equalize)).into_iter().collect()
}
