//! Convolutional decoder: three upsample-concat-fuse stages and a head that
//! restores voxel resolution.

use super::config::{ModelConfig, LEVELS, MERGES};
use crate::error::{shape_err, Result};
use crate::nn::{BatchNorm3d, Builder, Conv3d, ConvTranspose3d};
use crate::params::ParamStore;
use crate::tensor::{Conv3dSpec, Graph, Var};

/// Two conv-BN-GeLU-dropout units with a 1×1×1 projection shortcut when the
/// channel count changes.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv1: Conv3d,
    pub bn1: BatchNorm3d,
    pub conv2: Conv3d,
    pub bn2: BatchNorm3d,
    pub shortcut: Option<Conv3d>,
    pub dropout: f32,
}

impl ResidualBlock {
    pub fn new(b: &mut Builder, name: &str, c_in: usize, c_out: usize, dropout: f32) -> Result<Self> {
        let same = Conv3dSpec::same(3);
        Ok(Self {
            conv1: Conv3d::new(b, &format!("{name}.conv1"), c_in, c_out, [3; 3], same, false)?,
            bn1: BatchNorm3d::new(b, &format!("{name}.bn1"), c_out)?,
            conv2: Conv3d::new(b, &format!("{name}.conv2"), c_out, c_out, [3; 3], same, false)?,
            bn2: BatchNorm3d::new(b, &format!("{name}.bn2"), c_out)?,
            shortcut: if c_in != c_out {
                Some(Conv3d::new(b, &format!("{name}.shortcut"), c_in, c_out, [1; 3], Conv3dSpec::same(1), false)?)
            } else {
                None
            },
            dropout,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (conv, bn) in [(&self.conv1, &self.bn1), (&self.conv2, &self.bn2)] {
            h = conv.forward(g, store, h)?;
            h = bn.forward(g, store, h)?;
            h = g.gelu(h)?;
            h = g.dropout(h, self.dropout)?;
        }
        let skip = match &self.shortcut {
            Some(conv) => conv.forward(g, store, x)?,
            None => x,
        };
        g.add(h, skip)
    }
}

/// Transposed conv to voxel resolution, then two 3×3×3 convs to one channel.
#[derive(Clone, Debug)]
pub struct Head {
    pub up: ConvTranspose3d,
    pub conv1: Conv3d,
    pub conv2: Conv3d,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub ups: Vec<ConvTranspose3d>,
    pub blocks: Vec<ResidualBlock>,
    pub head: Head,
}

impl Decoder {
    /// Stage `i` upsamples `C → C/4`, concatenates pyramid level `L2 - i` and
    /// fuses to that level's width.
    pub fn new(b: &mut Builder, config: &ModelConfig) -> Result<Self> {
        let mut ups = Vec::with_capacity(MERGES);
        let mut blocks = Vec::with_capacity(MERGES);
        let mut c = config.level_channels(MERGES);
        for i in 0..MERGES {
            let skip = config.level_channels(MERGES - 1 - i);
            ups.push(ConvTranspose3d::new(b, &format!("decoder.up{i}"), c, c / 4, [2; 3], [2; 3])?);
            blocks.push(ResidualBlock::new(b, &format!("decoder.res{i}"), c / 4 + skip, skip, config.dropout)?);
            c = skip;
        }
        let e = config.embed_dim;
        let patch = config.patch.dhw();
        let same = Conv3dSpec::same(3);
        let head = Head {
            up: ConvTranspose3d::new(b, "decoder.head.up", e, e / 2, patch, patch)?,
            conv1: Conv3d::new(b, "decoder.head.conv1", e / 2, e / 2, [3; 3], same, true)?,
            conv2: Conv3d::new(b, "decoder.head.conv2", e / 2, 1, [3; 3], same, true)?,
        };
        Ok(Self { ups, blocks, head })
    }

    /// `skips` are channel-first level maps, finest first. Returns `[1, D, H, W]` probabilities.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, skips: &[Var; LEVELS]) -> Result<Var> {
        let mut x = skips[MERGES];
        for i in 0..MERGES {
            x = self.ups[i].forward(g, store, x)?;
            let skip = skips[MERGES - 1 - i];
            if g.shape(x)[1..] != g.shape(skip)[1..] {
                return Err(shape_err("decode", format!("upsampled {:?} vs skip {:?}", g.shape(x), g.shape(skip))));
            }
            x = g.concat(&[x, skip], 0)?;
            x = self.blocks[i].forward(g, store, x)?;
        }
        let h = self.head.up.forward(g, store, x)?;
        let h = g.gelu(h)?;
        let h = self.head.conv1.forward(g, store, h)?;
        let h = g.gelu(h)?;
        let h = self.head.conv2.forward(g, store, h)?;
        g.sigmoid(h)
    }
}
