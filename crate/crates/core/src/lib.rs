//! Prompt-driven 3D segmentation of cells with a hierarchical vision-transformer U-Net.
//!
//! The crate is organised bottom-up: [`tensor`] is a small reverse-mode
//! autodiff engine, [`model`] assembles the encoder, prompt encoder,
//! cross-attention skips and convolutional decoder on top of it, [`loss`] and
//! [`metrics`] score predictions, [`synth`] produces labelled volumes, and
//! [`pipeline`] ties training, inference and evaluation together.

pub mod checkpoint;
pub mod components;
pub mod error;
pub mod exec;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Exec;
pub use tensor::{Graph, Tensor, Var};
