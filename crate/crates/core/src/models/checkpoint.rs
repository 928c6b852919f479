use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "latent-walk-checkpoint/1";

/// JSON checkpoint envelope. Tensors inside `model` serialize as
/// `{"shape": [...], "data": [...]}` with round-trip exact floats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub format: String,
    pub kind: String,
    pub seed: u64,
    pub config_hash: String,
    pub model: T,
}

impl<T> Checkpoint<T> {
    pub fn new(kind: &str, seed: u64, config_hash: &str, model: T) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            kind: kind.to_string(),
            seed,
            config_hash: config_hash.to_string(),
            model,
        }
    }
}

pub fn save_checkpoint<T: Serialize>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    let text = serde_json::to_string(ckpt).map_err(|e| Error::format("checkpoint", e.to_string()))?;
    crate::pipeline::io::write_atomic(path, text.as_bytes())
}

pub fn load_checkpoint<T: DeserializeOwned>(path: &Path) -> Result<Checkpoint<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint<T> =
        serde_json::from_str(&text).map_err(|e| Error::format("checkpoint", format!("{}: {}", path.display(), e)))?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(Error::format(
            "checkpoint",
            format!("{} has format {:?}, expected {:?}", path.display(), ckpt.format, CHECKPOINT_FORMAT),
        ));
    }
    Ok(ckpt)
}
