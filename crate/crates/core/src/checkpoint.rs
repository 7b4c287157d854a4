//! `TR3D` named-tensor checkpoints.
//!
//! Layout (little-endian): magic `TR3D`, `u32` version, `u64` metadata length
//! and UTF-8 JSON metadata, `u32` tensor count, then per tensor `u32` name
//! length, name bytes, `u32` ndim, `u64` extents and the `u64` byte offset of
//! its payload relative to the start of the payload section. Raw `f32`
//! payloads follow in index order.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, SegModel, Stage};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TR3D";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub stage: Stage,
    pub epoch: usize,
    #[serde(default)]
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: IndexMap<String, Tensor>,
}

impl Checkpoint {
    /// Snapshot every stored tensor of `model`, buffers included.
    pub fn from_model(model: &SegModel, epoch: usize, history: Vec<EpochRecord>) -> Self {
        Self {
            meta: CheckpointMeta { config: model.config().clone(), stage: model.stage(), epoch, history },
            tensors: model.store.iter().map(|(_, name, p)| (name.to_string(), p.value().clone())).collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let payload: usize = self.tensors.values().map(|t| t.numel() * 4).sum();
        let mut out = Vec::with_capacity(64 + meta.len() + payload + self.tensors.len() * 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += t.numel() as u64 * 4;
        }
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a TR3D checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = r.u64()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;
        let count = r.u32()? as usize;
        let mut index = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?.to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let offset = r.u64()? as usize;
            index.push((name, shape, offset));
        }
        let payload = &bytes[r.pos..];
        let mut tensors = IndexMap::with_capacity(count);
        for (name, shape, offset) in index {
            let n: usize = shape.iter().product();
            let raw = payload.get(offset..offset + n * 4).ok_or_else(|| Error::Format(format!("payload of `{name}` is truncated")))?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::Format(format!("duplicate tensor `{name}`")));
            }
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Rebuild the model described by the metadata and load every tensor.
    pub fn to_model(&self) -> Result<SegModel> {
        let mut model = SegModel::new(&self.meta.config, self.meta.stage, 0)?;
        load_tensors(&mut model, &self.tensors, |_| true)?;
        Ok(model)
    }
}

/// Copy the tensors whose names pass `select` into `model`. Every selected
/// model tensor must be present with the same shape.
pub fn load_tensors(model: &mut SegModel, tensors: &IndexMap<String, Tensor>, select: impl Fn(&str) -> bool) -> Result<Vec<String>> {
    let targets: Vec<_> = model.store.iter().filter(|(_, name, _)| select(name)).map(|(id, name, _)| (id, name.to_string())).collect();
    let mut loaded = Vec::with_capacity(targets.len());
    for (id, name) in targets {
        let t = tensors.get(&name).ok_or_else(|| Error::MissingTensor(name.clone()))?;
        model.store.set_value(id, t.clone())?;
        loaded.push(name);
    }
    Ok(loaded)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
