//! Synthetic labelled volumes and the data preparation applied before training.

mod augment;
mod crop;
mod generate;
mod io;
mod tiling;
mod volume;

pub use augment::{add_noise, affine_sample, apply_gamma, augment, flip, flip_sample, AugmentOp, AugmentParams};
pub use crop::{crop_around_cell, window_origin, CellCrop, CROP_JITTER};
pub use generate::{
    bounding_box, boxes_overlap, derive_seed, gaussian_blur, generate_cell, generate_dataset, generate_overlap_volume, generate_volume,
    generate_volume_with, place_somas, render_intensity, Cell, SynthConfig, VolumeSample,
};
pub use io::{
    decode_v3d, encode_v3d, load_dataset, load_sample, read_v3d, sample_dir_name, save_dataset, save_sample, write_v3d, SampleMeta,
    V3dElement, V3D_MAGIC,
};
pub use tiling::{
    crop_sample, foreground_fraction, histogram_equalize, tile_origins, tile_volume, Tile, TileMode, HISTOGRAM_BINS,
    MIN_FOREGROUND_FRACTION,
};
pub use volume::{Image, Mask, Volume};
