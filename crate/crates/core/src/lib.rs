//! Foreground/background segmentation with an encoder, a dilated-convolution
//! feature pooling module and a decoder, plus training, change-detection
//! metrics, dataset loading, ablation grids and heatmap visualisation.

pub mod bundle;
pub mod data;
pub mod harness;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod train;
pub mod viz;

pub use tensor::{Shape4, Tensor};
