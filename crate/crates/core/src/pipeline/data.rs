//! Training items, the per-stage training sets and dataset splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Dims, Stage};
use crate::synth::{
    augment, crop_around_cell, derive_seed, histogram_equalize, tile_volume, AugmentOp, AugmentParams, TileMode, VolumeSample, CROP_JITTER,
};
use crate::tensor::Tensor;

/// One model input with its target.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    /// `[1, D, H, W]` intensities.
    pub image: Tensor,
    /// `[1, D, H, W]` binary target.
    pub target: Tensor,
    /// Prompt point `(x, y, z)` for the branch stage.
    pub prompt: Option<[f32; 3]>,
}

/// Source of training items; item `i` of `epoch` must be a pure function of
/// its arguments so any execution order gives the same batch.
pub trait TrainSet: Sync {
    fn len(&self) -> usize;
    fn stage(&self) -> Stage;
    fn item(&self, index: usize, epoch: usize, seed: u64) -> Result<TrainItem>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn item_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, epoch as u64), index as u64))
}

/// Soma-stage tiles: equalised once, augmented per epoch; target is the soma mask.
pub struct SomaTiles {
    tiles: Vec<VolumeSample>,
    ops: Vec<AugmentOp>,
    params: AugmentParams,
}

impl SomaTiles {
    /// Cut `volumes` into training tiles (dropping sparse tiles) and equalise them.
    pub fn new(volumes: &[VolumeSample], tile: Dims, overlap: f64, ops: &[AugmentOp], params: AugmentParams) -> Result<Self> {
        let mut tiles = Vec::new();
        for v in volumes {
            for t in tile_volume(v, tile, overlap, TileMode::Training)? {
                let mut s = t.sample;
                s.image = histogram_equalize(&s.image);
                tiles.push(s);
            }
        }
        Ok(Self { tiles, ops: ops.to_vec(), params })
    }

    /// Use the samples as given, with no tiling or equalisation.
    pub fn from_tiles(tiles: Vec<VolumeSample>, ops: &[AugmentOp], params: AugmentParams) -> Self {
        Self { tiles, ops: ops.to_vec(), params }
    }
}

impl TrainSet for SomaTiles {
    fn len(&self) -> usize {
        self.tiles.len()
    }

    fn stage(&self) -> Stage {
        Stage::Soma
    }

    fn item(&self, index: usize, epoch: usize, seed: u64) -> Result<TrainItem> {
        let mut rng = item_rng(seed, epoch, index);
        let s = augment(&self.tiles[index], &mut rng, &self.ops, &self.params);
        Ok(TrainItem { image: s.image.to_tensor(), target: s.soma_mask.to_tensor(), prompt: None })
    }
}

/// Branch-stage crops: one item per (volume, cell), re-jittered every epoch.
pub struct CellCrops {
    volumes: Vec<VolumeSample>,
    pairs: Vec<(usize, usize)>,
    crop: Dims,
    jitter: f32,
    ops: Vec<AugmentOp>,
    params: AugmentParams,
}

impl CellCrops {
    pub fn new(volumes: Vec<VolumeSample>, crop: Dims, ops: &[AugmentOp], params: AugmentParams) -> Result<Self> {
        for v in &volumes {
            let d = v.dims();
            if crop.w > d.w || crop.h > d.h || crop.d > d.d {
                return Err(Error::InvalidArgument(format!("crop {crop} exceeds volume {d}")));
            }
        }
        let pairs = volumes.iter().enumerate().flat_map(|(v, s)| (0..s.centroids.len()).map(move |c| (v, c))).collect();
        Ok(Self { volumes, pairs, crop, jitter: CROP_JITTER, ops: ops.to_vec(), params })
    }

    pub fn with_jitter(mut self, jitter: f32) -> Self {
        self.jitter = jitter;
        self
    }
}

impl TrainSet for CellCrops {
    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn stage(&self) -> Stage {
        Stage::Branch
    }

    fn item(&self, index: usize, epoch: usize, seed: u64) -> Result<TrainItem> {
        let mut rng = item_rng(seed, epoch, index);
        let (v, c) = self.pairs[index];
        let src = &self.volumes[v];
        let mut crop = crop_around_cell(src, c, self.crop, self.jitter, &mut rng)?;
        crop.image = histogram_equalize(&crop.image);
        let s = augment(&crop.to_sample(src.voxel_size, src.seed), &mut rng, &self.ops, &self.params);
        let (Some(mask), Some(&prompt)) = (s.cell_masks.first(), s.centroids.first()) else {
            // the target was transformed out of view; fall back to the plain crop
            return Ok(TrainItem { image: crop.image.to_tensor(), target: crop.target.to_tensor(), prompt: Some(crop.prompt) });
        };
        Ok(TrainItem { image: s.image.to_tensor(), target: mask.to_tensor(), prompt: Some(prompt) })
    }
}

/// Volume indices of a train/test/validation split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Deterministic shuffled 80/15/5 split of `n` volumes.
pub fn split_indices(n: usize, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = (n as f64 * 0.80).round() as usize;
    let test = ((n as f64 * 0.15).round() as usize).min(n - train);
    Split { train: idx[..train].to_vec(), test: idx[train..train + test].to_vec(), validation: idx[train + test..].to_vec() }
}

/// `k` folds over a shuffled order; returns `(train, held_out)` per fold.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!("cannot make {k} folds of {n} volumes")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..k)
        .map(|f| {
            let (lo, hi) = (f * n / k, (f + 1) * n / k);
            let held = idx[lo..hi].to_vec();
            let train = idx[..lo].iter().chain(&idx[hi..]).copied().collect();
            (train, held)
        })
        .collect())
}

/// Select samples by index.
pub fn select(samples: &[VolumeSample], idx: &[usize]) -> Vec<VolumeSample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}
