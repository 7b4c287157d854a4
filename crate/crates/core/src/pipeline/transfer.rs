use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{config_err, Error, Result};
use crate::model::SegModel;

/// Which tensors of the target model were copied and which kept their
/// fresh initialisation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransferManifest {
    pub transferred: Vec<String>,
    pub fresh: Vec<String>,
}

/// Tensors carried over from the soma stage.
pub fn is_transferred(name: &str) -> bool {
    name.starts_with("encoder.") || name.starts_with("decoder.")
}

/// Copy every encoder and decoder tensor (batch-norm statistics included)
/// from `ckpt` into `model`. All tensors are checked before any is written,
/// so a failed transfer leaves the model untouched.
pub fn transfer_weights(ckpt: &Checkpoint, model: &mut SegModel) -> Result<TransferManifest> {
    let mut manifest = TransferManifest::default();
    let mut updates = Vec::new();
    for (id, name, p) in model.store.iter() {
        if !is_transferred(name) {
            manifest.fresh.push(name.to_string());
            continue;
        }
        let src = ckpt.tensors.get(name).ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        if src.shape() != p.value().shape() {
            return Err(Error::TensorMismatch {
                name: name.to_string(),
                expected: p.value().shape().to_vec(),
                found: src.shape().to_vec(),
            });
        }
        updates.push((id, src.clone()));
        manifest.transferred.push(name.to_string());
    }
    let (a, b) = (&ckpt.meta.config, model.config());
    if a.input_dims != b.input_dims || a.heads != b.heads || a.patch != b.patch || a.blocks != b.blocks {
        return Err(config_err("config", format!("checkpoint config {a:?} does not match model config {b:?}")));
    }
    for (id, t) in updates {
        model.store.set_value(id, t)?;
    }
    Ok(manifest)
}
