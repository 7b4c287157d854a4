use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::infer::{binarize, extract_somas, segment_cell, sliding_window_infer, InferOptions, THRESHOLD};
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate, apld, detection_metrics, dice_score, hausdorff, mask_points, Aggregate, DetectionMetrics, DETECTION_RADIUS,
};
use crate::model::{Dims, SegModel};
use crate::synth::{Mask, VolumeSample};

/// Components smaller than this are not reported as somas.
pub const MIN_SOMA_SIZE: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SomaSampleScore {
    pub index: usize,
    pub detection: DetectionMetrics,
    /// Voxel Dice of the thresholded soma mask.
    pub dice: f64,
    pub predicted: Vec<[usize; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SomaReport {
    pub per_sample: Vec<SomaSampleScore>,
    /// Detection scores from the match counts summed over all samples.
    pub pooled: DetectionMetrics,
    /// Mean and std over samples of accuracy, f1, precision, recall and dice.
    pub aggregate: BTreeMap<String, Aggregate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub volume: usize,
    pub cell: usize,
    pub dice: f64,
    /// `None` when the ground-truth skeleton is empty.
    pub apld: Option<f64>,
    /// Physical units; `None` for an empty prediction.
    pub hausdorff: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchReport {
    pub per_cell: Vec<CellScore>,
    /// Mean and std over cells of dice, apld and hausdorff (undefined values skipped).
    pub aggregate: BTreeMap<String, Aggregate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum EvalReport {
    Soma(SomaReport),
    Branch(BranchReport),
}

fn to_f64(points: &[[f32; 3]]) -> Vec<[f64; 3]> {
    points.iter().map(|p| p.map(f64::from)).collect()
}

pub fn score_soma(index: usize, gt: &VolumeSample, pred_mask: &Mask, predicted: Vec<[usize; 3]>) -> Result<SomaSampleScore> {
    let pred: Vec<[f64; 3]> = predicted.iter().map(|p| p.map(|v| v as f64)).collect();
    Ok(SomaSampleScore {
        index,
        detection: detection_metrics(&pred, &to_f64(&gt.centroids), DETECTION_RADIUS)?,
        dice: dice_score(&pred_mask.to_bools(), &gt.soma_mask.to_bools()),
        predicted,
    })
}

fn collect(rows: &[(&str, Vec<f64>)]) -> BTreeMap<String, Aggregate> {
    rows.iter().filter_map(|(k, v)| aggregate(v).map(|a| (k.to_string(), a))).collect()
}

pub fn soma_report(per_sample: Vec<SomaSampleScore>) -> Result<SomaReport> {
    if per_sample.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    let sum = |f: fn(&DetectionMetrics) -> usize| per_sample.iter().map(|s| f(&s.detection)).sum::<usize>();
    let pooled = DetectionMetrics::from_counts(sum(|d| d.tp), sum(|d| d.fp), sum(|d| d.fn_));
    let col = |f: fn(&SomaSampleScore) -> f64| per_sample.iter().map(f).collect::<Vec<_>>();
    let aggregate = collect(&[
        ("accuracy", col(|s| s.detection.accuracy)),
        ("f1", col(|s| s.detection.f1)),
        ("precision", col(|s| s.detection.precision)),
        ("recall", col(|s| s.detection.recall)),
        ("dice", col(|s| s.dice)),
    ]);
    Ok(SomaReport { per_sample, pooled, aggregate })
}

pub fn score_cell(volume: usize, cell: usize, gt: &Mask, pred: &Mask, spacing: [f64; 3]) -> Result<CellScore> {
    let dims = gt.dims.dhw();
    let (g, p) = (gt.to_bools(), pred.to_bools());
    let pred_pts = mask_points(&p, dims);
    let hd = if pred_pts.is_empty() { None } else { Some(hausdorff(&pred_pts, &mask_points(&g, dims), spacing)?) };
    Ok(CellScore { volume, cell, dice: dice_score(&p, &g), apld: apld(&p, &g, dims, spacing).ok(), hausdorff: hd })
}

pub fn branch_report(per_cell: Vec<CellScore>) -> Result<BranchReport> {
    if per_cell.is_empty() {
        return Err(Error::InvalidArgument("no cells to evaluate".into()));
    }
    let aggregate = collect(&[
        ("dice", per_cell.iter().map(|c| c.dice).collect()),
        ("apld", per_cell.iter().filter_map(|c| c.apld).collect()),
        ("hausdorff", per_cell.iter().filter_map(|c| c.hausdorff).collect()),
    ]);
    Ok(BranchReport { per_cell, aggregate })
}

/// Sliding-window soma detection on every sample.
pub fn evaluate_soma(model: &SegModel, samples: &[VolumeSample], opts: InferOptions) -> Result<SomaReport> {
    let tile = model.config().input_dims;
    let scores = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let prob = sliding_window_infer(model, &s.image, tile, opts)?;
            let found = extract_somas(&prob, THRESHOLD, MIN_SOMA_SIZE)?;
            score_soma(i, s, &binarize(&prob, THRESHOLD), found)
        })
        .collect::<Result<Vec<_>>>()?;
    soma_report(scores)
}

/// Prompted segmentation of every ground-truth cell, prompted at its true centroid.
pub fn evaluate_branch(model: &SegModel, samples: &[VolumeSample], crop: Dims, opts: InferOptions) -> Result<BranchReport> {
    let jobs: Vec<(usize, usize)> = samples.iter().enumerate().flat_map(|(v, s)| (0..s.centroids.len()).map(move |c| (v, c))).collect();
    let scores = opts.exec.map(&jobs, |_, &(v, c)| {
        let s = &samples[v];
        let pred = segment_cell(model, &s.image, s.centroids[c], crop, opts.equalize)?;
        score_cell(v, c, &s.cell_masks[c], &pred, s.voxel_size)
    });
    branch_report(scores.into_iter().collect::<Result<Vec<_>>>()?)
}
