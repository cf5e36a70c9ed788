//! Experiment grids, runs, checkpoints and result tables.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{DataError, DatasetKind};
use crate::metrics::{AggregationScheme, MetricsError, MetricsReport};
use crate::model::{ModelConfig, ModelError};
use crate::train::{StopReason, TrainError, TrainSchedule};

mod checkpoint;
mod grid;
mod run;
mod table;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CheckpointMeta, ARRAYS_DIR, CHECKPOINT_FILE,
    CHECKPOINT_VERSION,
};
pub use grid::{parse_experiment, parse_grid, GridError};
pub use run::{
    evaluate_frames, load_results, open_index, reevaluate, run, run_dir_name, Selection, DATA_ROOT_ENV, RESULT_FILE,
    SELECTION_FILE, TRAIN_LOG_FILE,
};
pub use table::{emit_table, TableFormat, TableLayout};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSelector {
    pub kind: DatasetKind,
    pub root: PathBuf,
    /// Empty selects every category.
    pub categories: Vec<String>,
    /// Empty selects every video of the chosen categories.
    pub videos: Vec<String>,
    pub frames_per_video: usize,
    pub seed: u64,
    /// CityScapes foreground class names.
    pub classes: Vec<String>,
    pub val_fraction: f64,
    /// Caps the held-out frames evaluated per video (seeded subsample).
    pub eval_frames_per_video: Option<usize>,
}

impl Default for DatasetSelector {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Synthetic,
            root: PathBuf::new(),
            categories: Vec::new(),
            videos: Vec::new(),
            frames_per_video: 200,
            seed: 0,
            classes: Vec::new(),
            val_fraction: 0.2,
            eval_frames_per_video: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub preset: Option<String>,
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    pub dataset: DatasetSelector,
    pub scheme: AggregationScheme,
    /// Encoder weight bundle directory.
    pub pretrained: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoResult {
    pub video: String,
    pub report: MetricsReport,
    pub eval_frames: usize,
    /// No held-out frames were left, so the training frames were evaluated.
    pub eval_fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryResult {
    pub category: String,
    pub report: MetricsReport,
    pub videos: Vec<VideoResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistorySummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub final_train_loss: f64,
    pub stop_reason: StopReason,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Succeeded,
    Failed { stage: String, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: String,
    pub status: RunStatus,
    pub scheme: AggregationScheme,
    pub categories: Vec<CategoryResult>,
    pub history: Option<HistorySummary>,
    /// Relative to the run directory.
    pub checkpoint: Option<PathBuf>,
    pub wall_time_s: f64,
    pub seed: u64,
    pub spec: ExperimentSpec,
}

impl ExperimentResult {
    pub fn succeeded(&self) -> bool {
        self.status == RunStatus::Succeeded
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Bundle(#[from] crate::bundle::BundleError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Json { path: PathBuf, reason: String },
    #[error("table: {0}")]
    Table(String),
}
