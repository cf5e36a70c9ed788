//! Training: weighted loss, optimizers, callbacks and the epoch loop.

pub mod callbacks;
pub mod loss;
pub mod optim;
pub mod trainer;

pub use callbacks::{EarlyStopping, ReduceOnPlateau, LR_FLOOR, MIN_DELTA};
pub use loss::{fg_weight, weighted_bce, weighted_bce_with_grad, FgWeightPolicy, WeightMode};
pub use optim::{update_scalar, Moments, Optimizer, OptimizerKind};
pub use trainer::{
    split_validation, train, train_with, Control, EpochRecord, StopReason, TrainError, TrainHistory,
    TrainOutcome, TrainSchedule, Trainer,
};
