//! Encoder / feature pooling module / decoder network: configuration,
//! declarative layer graph, parameters and execution.

pub mod config;
pub mod exec;
pub mod graph;
pub mod params;
pub mod presets;
pub mod summary;

pub use config::{
    DecoderConfig, DropoutKind, EncoderKind, FeatureInjection, FpmConfig, ModelConfig, NormKind, OutputTopology,
};
pub use exec::{backward, forward, forward_train, Gradients, Trace};
pub use graph::{build_model, NetworkGraph, Node, NodeId, Op, Section, Taps};
pub use params::{apply_pretrained_and_freeze, ParamRole, ParamTensor, ParameterSet};
pub use presets::{preset, PRESET_NAMES};
pub use summary::{structural_summary, StageCounts, StructuralSummary};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("malformed graph: {0}")]
    Graph(String),
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    Dimension {
        what: String,
        expected: String,
        actual: String,
    },
    #[error("cannot load weights for `{layer}`: {reason}")]
    WeightLoad { layer: String, reason: String },
    #[error("backbone `{0}` has no built-in implementation; an external adapter is required")]
    BackboneUnavailable(String),
}
