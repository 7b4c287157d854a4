//! V3D volume files and on-disk datasets.
//!
//! A V3D file is the magic `V3D1`, a dtype byte (0 = f32, 1 = u8), a `u32`
//! rank, `u64` extents outermost first, then the little-endian row-major payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::generate::VolumeSample;
use super::volume::{Image, Mask, Volume};
use crate::error::{Error, Result};
use crate::model::Dims;

pub const V3D_MAGIC: &[u8; 4] = b"V3D1";

/// Element types storable in a V3D file.
pub trait V3dElement: Copy + Default {
    const CODE: u8;
    const SIZE: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(b: &[u8]) -> Self;
}

impl V3dElement for f32 {
    const CODE: u8 = 0;
    const SIZE: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(b: &[u8]) -> Self {
        f32::from_le_bytes(b.try_into().expect("4 bytes"))
    }
}

impl V3dElement for u8 {
    const CODE: u8 = 1;
    const SIZE: usize = 1;
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }
    fn read_le(b: &[u8]) -> Self {
        b[0]
    }
}

pub fn encode_v3d<T: V3dElement>(v: &Volume<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 1 + 4 + 24 + v.data.len() * T::SIZE);
    out.extend_from_slice(V3D_MAGIC);
    out.push(T::CODE);
    out.extend_from_slice(&3u32.to_le_bytes());
    for e in v.dims.dhw() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &x in &v.data {
        x.write_le(&mut out);
    }
    out
}

pub fn decode_v3d<T: V3dElement>(bytes: &[u8]) -> Result<Volume<T>> {
    let bad = |m: &str| Error::Format(format!("v3d: {m}"));
    if bytes.len() < 9 || &bytes[..4] != V3D_MAGIC {
        return Err(bad("bad magic"));
    }
    if bytes[4] != T::CODE {
        return Err(bad(&format!("dtype code {} where {} was expected", bytes[4], T::CODE)));
    }
    let ndim = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    if ndim != 3 {
        return Err(bad(&format!("rank {ndim}, expected 3")));
    }
    let header = 9 + 8 * ndim;
    if bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let ext: Vec<usize> = (0..ndim).map(|i| u64::from_le_bytes(bytes[9 + 8 * i..17 + 8 * i].try_into().unwrap()) as usize).collect();
    let dims = Dims::from_dhw([ext[0], ext[1], ext[2]]);
    let payload = &bytes[header..];
    if payload.len() != dims.voxels() * T::SIZE {
        return Err(bad(&format!("payload of {} bytes for dims {dims}", payload.len())));
    }
    Volume::new(dims, payload.chunks_exact(T::SIZE).map(T::read_le).collect())
}

pub fn write_v3d<T: V3dElement>(path: &Path, v: &Volume<T>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_v3d(v))?;
    Ok(())
}

pub fn read_v3d<T: V3dElement>(path: &Path) -> Result<Volume<T>> {
    decode_v3d(&fs::read(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub dims: Dims,
    pub centroids: Vec<[f32; 3]>,
    pub voxel_size: [f64; 3],
    pub seed: u64,
}

pub fn save_sample(dir: &Path, s: &VolumeSample) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_v3d(&dir.join("image.v3d"), &s.image)?;
    write_v3d(&dir.join("soma.v3d"), &s.soma_mask)?;
    for (k, m) in s.cell_masks.iter().enumerate() {
        write_v3d(&dir.join(format!("cell_{k}.v3d")), m)?;
    }
    let meta = SampleMeta { dims: s.dims(), centroids: s.centroids.clone(), voxel_size: s.voxel_size, seed: s.seed };
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

pub fn load_sample(dir: &Path) -> Result<VolumeSample> {
    let meta: SampleMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
    let image: Image = read_v3d(&dir.join("image.v3d"))?;
    let soma_mask: Mask = read_v3d(&dir.join("soma.v3d"))?;
    let cell_masks = (0..meta.centroids.len()).map(|k| read_v3d::<u8>(&dir.join(format!("cell_{k}.v3d")))).collect::<Result<Vec<_>>>()?;
    if [image.dims, soma_mask.dims].iter().chain(cell_masks.iter().map(|m| &m.dims)).any(|d| *d != meta.dims) {
        return Err(Error::Format(format!("{}: volume dims disagree with meta.json", dir.display())));
    }
    Ok(VolumeSample { image, soma_mask, cell_masks, centroids: meta.centroids, voxel_size: meta.voxel_size, seed: meta.seed })
}

/// Directory name of volume `i` inside a dataset.
pub fn sample_dir_name(i: usize) -> String {
    format!("vol_{i:04}")
}

pub fn save_dataset(root: &Path, samples: &[VolumeSample]) -> Result<()> {
    fs::create_dir_all(root)?;
    for (i, s) in samples.iter().enumerate() {
        save_sample(&root.join(sample_dir_name(i)), s)?;
    }
    Ok(())
}

/// Load every `vol_*` directory under `root`, in name order.
pub fn load_dataset(root: &Path) -> Result<Vec<VolumeSample>> {
    let mut dirs: Vec<_> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir() && e.file_name().to_string_lossy().starts_with("vol_"))
        .map(|e| e.path())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidArgument(format!("no volumes under {}", root.display())));
    }
    dirs.iter().map(|d| load_sample(d)).collect()
}
