//! Checkpoints: an array bundle of every parameter plus a JSON header.
//!
//! ```text
//! <dir>/checkpoint.json   {"format_version": 1, "model": {...}, "best_epoch": .., "val_loss": ..}
//! <dir>/arrays/           array bundle (see `bundle`)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bundle::{ArrayBundle, BundleError};
use crate::model::{build_model, ModelConfig, ModelError, NetworkGraph, ParameterSet};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const ARRAYS_DIR: &str = "arrays";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed checkpoint header: {reason}")]
    Header { path: PathBuf, reason: String },
    #[error("{path}: checkpoint format version {found} is newer than supported version {supported}")]
    Version {
        path: PathBuf,
        found: u32,
        supported: u32,
    },
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub best_epoch: usize,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model: ModelConfig,
    best_epoch: usize,
    val_loss: f64,
}

pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub graph: NetworkGraph,
    pub params: ParameterSet,
    pub meta: CheckpointMeta,
}

pub fn save_checkpoint(
    params: &ParameterSet,
    config: &ModelConfig,
    meta: &CheckpointMeta,
    dir: &Path,
) -> Result<(), CheckpointError> {
    params.to_bundle().write(&dir.join(ARRAYS_DIR))?;
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        model: config.clone(),
        best_epoch: meta.best_epoch,
        val_loss: meta.val_loss,
    };
    let path = dir.join(CHECKPOINT_FILE);
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(&path, text).map_err(|source| CheckpointError::Io { path, source })
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, CheckpointError> {
    let path = dir.join(CHECKPOINT_FILE);
    let text = fs::read_to_string(&path).map_err(|source| CheckpointError::Io {
        path: path.clone(),
        source,
    })?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| CheckpointError::Header {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let found = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| CheckpointError::Header {
            path: path.clone(),
            reason: "missing format_version".into(),
        })? as u32;
    if found > CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            path,
            found,
            supported: CHECKPOINT_VERSION,
        });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| CheckpointError::Header {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let graph = build_model(&header.model)?;
    let bundle = ArrayBundle::read(&dir.join(ARRAYS_DIR))?;
    let mut params = ParameterSet::from_bundle(&graph, &bundle)?;
    params.set_frozen_blocks(header.model.frozen_blocks);
    Ok(Checkpoint {
        format_version: header.format_version,
        config: header.model,
        graph,
        params,
        meta: CheckpointMeta {
            best_epoch: header.best_epoch,
            val_loss: header.val_loss,
        },
    })
}
