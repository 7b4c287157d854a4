//! Evaluation metrics: soma detection scores, Dice, Hausdorff distance and
//! average path-length difference.
//!
//! Points are `(x, y, z)` voxel coordinates; spacings are `(x, y, z)` in µm.
//! Binary volumes are `[d, h, w]` row-major `bool` slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{soft_skeleton, SkeletonConfig};
use crate::tensor::{Graph, Tensor, Triple};

/// Default centroid matching radius in voxels.
pub const DETECTION_RADIUS: f64 = 5.0;
/// Erosion rounds used to thin binary masks for path lengths.
pub const PATH_SKELETON_ITERATIONS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

fn dist2(a: [f64; 3], b: [f64; 3], spacing: [f64; 3]) -> f64 {
    (0..3).map(|i| ((a[i] - b[i]) * spacing[i]).powi(2)).sum()
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Greedy one-to-one matching: candidate pairs within `radius` are taken in
/// order of increasing distance. Unmatched predictions are false positives,
/// unmatched ground truth false negatives. Ratios with a zero denominator are 0,
/// except that two empty lists score 1 throughout.
pub fn detection_metrics(pred: &[[f64; 3]], gt: &[[f64; 3]], radius: f64) -> Result<DetectionMetrics> {
    if radius.is_nan() || radius <= 0.0 {
        return Err(Error::InvalidArgument(format!("matching radius {radius} must be positive")));
    }
    let r2 = radius * radius;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, t) in gt.iter().enumerate() {
            let d = dist2(*p, *t, [1.0; 3]);
            if d <= r2 {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut used_p, mut used_t) = (vec![false; pred.len()], vec![false; gt.len()]);
    let mut tp = 0;
    for (_, i, j) in pairs {
        if !used_p[i] && !used_t[j] {
            used_p[i] = true;
            used_t[j] = true;
            tp += 1;
        }
    }
    Ok(DetectionMetrics::from_counts(tp, pred.len() - tp, gt.len() - tp))
}

impl DetectionMetrics {
    /// Scores from match counts, with the same conventions as [`detection_metrics`].
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        if tp + fp + fn_ == 0 {
            return Self { tp, fp, fn_, accuracy: 1.0, f1: 1.0, precision: 1.0, recall: 1.0 };
        }
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self { tp, fp, fn_, accuracy: ratio(tp, tp + fp + fn_), f1, precision, recall }
    }
}

/// `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice_score(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len(), "mask lengths differ");
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        na += x as usize;
        nb += y as usize;
    }
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

/// Intersection over union; two empty masks score 1.
pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len(), "mask lengths differ");
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Largest distance from a point of `from` to its nearest point of `to`.
/// Uses the early-break scan: the inner loop stops once a point is closer
/// than the running maximum, which cannot change the result.
fn directed_hausdorff2(from: &[[f64; 3]], to: &[[f64; 3]], spacing: [f64; 3]) -> f64 {
    let mut cmax = 0.0f64;
    for &a in from {
        let mut cmin = f64::INFINITY;
        for &b in to {
            let d = dist2(a, b, spacing);
            if d < cmin {
                cmin = d;
                if cmin < cmax {
                    break;
                }
            }
        }
        if cmin > cmax {
            cmax = cmin;
        }
    }
    cmax
}

/// Symmetric Hausdorff distance in physical units.
pub fn hausdorff(a: &[[f64; 3]], b: &[[f64; 3]], spacing: [f64; 3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("hausdorff distance of an empty point set".into()));
    }
    Ok(directed_hausdorff2(a, b, spacing).max(directed_hausdorff2(b, a, spacing)).sqrt())
}

/// Foreground voxel coordinates `(x, y, z)` of a mask.
pub fn mask_points(mask: &[bool], dims: Triple) -> Vec<[f64; 3]> {
    let [_, h, w] = dims;
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| [(i % w) as f64, (i / w % h) as f64, (i / (h * w)) as f64]).collect()
}

/// Binary skeleton: the soft skeleton of the mask, thresholded at 0.5.
pub fn binary_skeleton(mask: &[bool], dims: Triple, iterations: usize) -> Result<Vec<bool>> {
    let [d, h, w] = dims;
    let t = Tensor::new(vec![1, d, h, w], mask.iter().map(|&m| m as u8 as f32).collect())?;
    let mut g = Graph::inference();
    let v = g.constant(t);
    let s = soft_skeleton(&mut g, v, SkeletonConfig { iterations })?;
    Ok(g.value(s).data().iter().map(|&x| x > 0.5).collect())
}

/// Total edge length of a minimum spanning forest over the voxels of
/// `skeleton`, with edges between 26-neighbours weighted by physical distance.
pub fn path_length(skeleton: &[bool], dims: Triple, spacing: [f64; 3]) -> f64 {
    let [d, h, w] = dims;
    let mut edges = Vec::new();
    // each unordered neighbour pair once: the 13 lexicographically positive offsets
    let forward: Vec<[isize; 3]> = crate::components::neighbours26().filter(|o| *o > [0, 0, 0]).collect();
    for (i, &s) in skeleton.iter().enumerate() {
        if !s {
            continue;
        }
        let (z, y, x) = ((i / (h * w)) as isize, (i / w % h) as isize, (i % w) as isize);
        for &[dz, dy, dx] in &forward {
            let (nz, ny, nx) = (z + dz, y + dy, x + dx);
            if nz < 0 || ny < 0 || nx < 0 || nz >= d as isize || ny >= h as isize || nx >= w as isize {
                continue;
            }
            let j = (nz as usize * h + ny as usize) * w + nx as usize;
            if skeleton[j] {
                let len = ((dx as f64 * spacing[0]).powi(2) + (dy as f64 * spacing[1]).powi(2) + (dz as f64 * spacing[2]).powi(2)).sqrt();
                edges.push((len, i, j));
            }
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut parent: Vec<usize> = (0..skeleton.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let mut total = 0.0;
    for (len, i, j) in edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a] = b;
            total += len;
        }
    }
    total
}

/// Relative path-length difference `|L_pred - L_gt| / L_gt` of one cell.
pub fn apld(pred: &[bool], gt: &[bool], dims: Triple, spacing: [f64; 3]) -> Result<f64> {
    let gt_len = path_length(&binary_skeleton(gt, dims, PATH_SKELETON_ITERATIONS)?, dims, spacing);
    if gt_len <= 0.0 {
        return Err(Error::InvalidArgument("ground-truth skeleton has zero length".into()));
    }
    let pred_len = path_length(&binary_skeleton(pred, dims, PATH_SKELETON_ITERATIONS)?, dims, spacing);
    Ok((pred_len - gt_len).abs() / gt_len)
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

pub fn aggregate(values: &[f64]) -> Option<Aggregate> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(Aggregate { mean, std: var.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detection_arithmetic() {
        let gt = [[0.0, 0.0, 0.0], [20.0, 0.0, 0.0]];
        let m = detection_metrics(&[[1.0, 0.0, 0.0]], &gt, 5.0).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (1, 0, 1));
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 0.5);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.accuracy, 0.5);
        let none = detection_metrics(&[], &gt, 5.0).unwrap();
        assert_eq!((none.precision, none.f1, none.accuracy), (0.0, 0.0, 0.0));
        assert!(detection_metrics(&[], &gt, 0.0).is_err());
    }

    #[test]
    fn dice_cases() {
        assert_eq!(dice_score(&[true, false], &[true, false]), 1.0);
        assert_eq!(dice_score(&[true, false], &[false, true]), 0.0);
        assert_eq!(dice_score(&[true, true, false, false], &[false, true, true, false]), 0.5);
        assert_eq!(dice_score(&[false], &[false]), 1.0);
    }

    #[test]
    fn hausdorff_345() {
        let h = hausdorff(&[[0.0; 3]], &[[3.0, 4.0, 0.0]], [1.0; 3]).unwrap();
        assert_eq!(h, 5.0);
        assert!(hausdorff(&[], &[[0.0; 3]], [1.0; 3]).is_err());
    }

    #[test]
    fn straight_line_length() {
        let dims = [1, 1, 6];
        let line = [true; 6];
        assert!((path_length(&line, dims, [0.5, 1.0, 1.0]) - 2.5).abs() < 1e-12);
    }
}
