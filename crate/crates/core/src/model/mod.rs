//! Segmentation network: transformer encoder, skip connections and
//! convolutional decoder, in a soma (identity skips) and a prompted branch
//! (cross-attention skips) configuration.

pub mod config;
pub mod decoder;
pub mod encoder;
pub mod prompt;
pub mod rcam;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{Dims, ModelConfig, Variant, LEVELS, MERGES};
pub use decoder::{Decoder, ResidualBlock};
pub use encoder::{pyramid_shapes, sinusoidal_pe_3d, Encoder, FeaturePyramid, TransformerBlock};
pub use prompt::{normalize_points, PromptEncoder};
pub use rcam::{identity_skip, Rcam};

use crate::error::{Error, Result};
use crate::nn::Builder;
use crate::params::ParamStore;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Soma,
    Branch,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Soma => "soma",
            Stage::Branch => "branch",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "soma" => Ok(Stage::Soma),
            "branch" => Ok(Stage::Branch),
            other => Err(format!("unknown stage `{other}` (expected soma or branch)")),
        }
    }
}

/// Parameter totals grouped by checkpoint-name prefix. Buffers are excluded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub encoder: usize,
    pub skips: usize,
    pub decoder: usize,
    pub prompt: usize,
    pub total: usize,
}

#[derive(Clone, Debug)]
pub struct SegModel {
    config: ModelConfig,
    stage: Stage,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub prompt: Option<PromptEncoder>,
    pub rcams: Vec<Rcam>,
}

impl SegModel {
    /// Freshly initialized model. The encoder and decoder are created first,
    /// so soma and branch models built from the same seed share those weights.
    pub fn new(config: &ModelConfig, stage: Stage, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder { store: &mut store, rng: &mut rng };
        let encoder = Encoder::new(&mut b, config)?;
        let decoder = Decoder::new(&mut b, config)?;
        let (prompt, rcams) = match stage {
            Stage::Soma => (None, Vec::new()),
            Stage::Branch => {
                let prompt = PromptEncoder::new(&mut b, config)?;
                let rcams = (0..LEVELS)
                    .map(|l| Rcam::new(&mut b, &format!("rcam{l}"), config.level_channels(l), config.heads, config.skip_mlp_ratio))
                    .collect::<Result<_>>()?;
                (Some(prompt), rcams)
            }
        };
        Ok(Self { config: config.clone(), stage, store, encoder, decoder, prompt, rcams })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    /// Record a forward pass. `volume` is `[1, D, H, W]`; `prompts` are
    /// `(x, y, z)` voxel coordinates and are required by the branch model.
    pub fn forward(&self, g: &mut Graph, volume: Var, prompts: Option<&[[f32; 3]]>) -> Result<Var> {
        let store = &self.store;
        let pyramid = self.encoder.forward(g, store, volume)?;
        let mut skips = pyramid.levels;
        match (self.stage, prompts) {
            (Stage::Soma, _) => {
                for s in &mut skips {
                    *s = identity_skip(*s);
                }
            }
            (Stage::Branch, None) => {
                return Err(Error::InvalidArgument("the branch model needs at least one prompt point".into()));
            }
            (Stage::Branch, Some(points)) => {
                let encoder = self.prompt.as_ref().expect("branch model has a prompt encoder");
                let normalized = normalize_points(points, self.config.input_dims)?;
                let emb = encoder.encode(g, store, &normalized)?;
                let emb = encoder.with_padding(g, store, emb)?;
                for (l, s) in skips.iter_mut().enumerate() {
                    let p = encoder.project(g, store, emb.embeddings, l)?;
                    let pp = encoder.project(g, store, emb.pe, l)?;
                    let ip = g.constant(self.encoder.level_pe(l).clone());
                    *s = self.rcams[l].forward(g, store, *s, p, ip, pp)?;
                }
            }
        }
        let mut maps = skips;
        for (l, m) in maps.iter_mut().enumerate() {
            *m = encoder::tokens_to_volume(g, *m, pyramid.grids[l])?;
        }
        self.decoder.forward(g, store, &maps)
    }

    /// Evaluation-mode forward without gradient recording.
    pub fn predict(&self, volume: &Tensor, prompts: Option<&[[f32; 3]]>) -> Result<Tensor> {
        let mut g = Graph::inference();
        let v = g.constant(volume.clone());
        let out = self.forward(&mut g, v, prompts)?;
        Ok(g.value(out).clone())
    }

    pub fn count_parameters(&self) -> ParamCounts {
        let s = &self.store;
        ParamCounts {
            encoder: s.count_where(|n| n.starts_with("encoder.")),
            skips: s.count_where(|n| n.starts_with("rcam")),
            decoder: s.count_where(|n| n.starts_with("decoder.")),
            prompt: s.count_where(|n| n.starts_with("prompt.")),
            total: s.count_where(|_| true),
        }
    }

    /// Turn every cross-attention skip into the identity (no-op for the soma model).
    pub fn collapse_skips(&mut self) {
        for r in &self.rcams {
            r.collapse(&mut self.store);
        }
    }
}
