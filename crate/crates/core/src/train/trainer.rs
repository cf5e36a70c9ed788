//! Epoch loop with validation, plateau reduction and early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::callbacks::{EarlyStopping, ReduceOnPlateau};
use super::loss::{fg_weight, weighted_bce, weighted_bce_with_grad, FgWeightPolicy};
use super::optim::{Optimizer, OptimizerKind};
use crate::data::{batch_tensor, FramePair};
use crate::mask::Label;
use crate::model::{backward, forward, forward_train, ModelError, NetworkGraph, ParameterSet};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub optimizer: OptimizerKind,
    pub initial_lr: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub fg_weight_policy: FgWeightPolicy,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            initial_lr: 1e-4,
            plateau_factor: 0.1,
            plateau_patience: 5,
            early_stop_patience: 10,
            max_epochs: 80,
            batch_size: 4,
            fg_weight_policy: FgWeightPolicy::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid schedule field `{field}`: {reason}")]
    Schedule { field: String, reason: String },
    #[error("{0} set is empty")]
    EmptyDataset(&'static str),
    #[error("frame {frame} is {actual}, model expects {expected}x{expected}")]
    FrameSize {
        frame: String,
        actual: String,
        expected: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("loss diverged at epoch {epoch}, batch {batch} (lr {lr:e})")]
    Diverged { epoch: usize, batch: usize, lr: f64 },
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |field: &str, reason: String| {
            Err(TrainError::Schedule {
                field: field.into(),
                reason,
            })
        };
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad("initial_lr", format!("{} is not a positive number", self.initial_lr));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor", format!("{} is outside (0, 1)", self.plateau_factor));
        }
        if self.plateau_patience == 0 {
            return bad("plateau_patience", "must be positive".into());
        }
        if self.early_stop_patience < self.plateau_patience {
            return bad(
                "early_stop_patience",
                format!(
                    "{} is below plateau_patience {}",
                    self.early_stop_patience, self.plateau_patience
                ),
            );
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs", "must be at least 1".into());
        }
        let p = &self.fg_weight_policy;
        if !(p.max_weight >= 1.0) {
            return bad("fg_weight_policy.max_weight", format!("{} is below 1", p.max_weight));
        }
        if !(p.fixed_value > 0.0) {
            return bad("fg_weight_policy.fixed_value", "must be positive".into());
        }
        if !(p.epsilon > 0.0) {
            return bad("fg_weight_policy.epsilon", "must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub wall_time_s: f64,
}

impl EpochRecord {
    pub fn log_line(&self) -> String {
        format!(
            "epoch={} train_loss={:.6} val_loss={:.6} lr={:e}",
            self.epoch, self.train_loss, self.val_loss, self.lr
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    /// Stopped by the caller's observer.
    Halted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    /// Epoch with the lowest validation loss.
    pub best_epoch: usize,
}

impl TrainHistory {
    /// Equal up to wall-clock times.
    pub fn same_trajectory(&self, other: &TrainHistory) -> bool {
        self.stop_reason == other.stop_reason
            && self.best_epoch == other.best_epoch
            && self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.val_loss.to_bits() == b.val_loss.to_bits()
                    && a.lr.to_bits() == b.lr.to_bits()
            })
    }

    pub fn log_lines(&self) -> Vec<String> {
        self.records.iter().map(EpochRecord::log_line).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Halt,
}

pub struct TrainOutcome {
    pub params: ParameterSet,
    /// Parameters at the best-validation epoch.
    pub best_params: ParameterSet,
    pub history: TrainHistory,
}

/// Splits frame indices into (train, validation), holding out `fraction` of
/// the frames that contain foreground and of those that do not. Both lists
/// are sorted. With fewer than two frames the validation list is empty.
pub fn split_validation(frames: &[FramePair], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut with_fg, mut without): (Vec<usize>, Vec<usize>) =
        (0..frames.len()).partition(|&i| frames[i].mask.count(Label::Foreground) > 0);
    let mut val = Vec::new();
    let mut train = Vec::new();
    for stratum in [&mut with_fg, &mut without] {
        stratum.shuffle(&mut rng);
        let k = (stratum.len() as f64 * fraction).round() as usize;
        val.extend_from_slice(&stratum[..k]);
        train.extend_from_slice(&stratum[k..]);
    }
    if val.is_empty() && train.len() >= 2 {
        val.push(train.remove(0));
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn batch_labels(frames: &[&FramePair]) -> Vec<Label> {
    frames.iter().flat_map(|f| f.mask.labels.iter().copied()).collect()
}

/// Optimizer, learning rate and RNG for one model.
pub struct Trainer<'g> {
    pub graph: &'g NetworkGraph,
    pub params: ParameterSet,
    pub optimizer: Optimizer,
    pub lr: f64,
    policy: FgWeightPolicy,
    dropout_rng: ChaCha8Rng,
}

impl<'g> Trainer<'g> {
    pub fn new(graph: &'g NetworkGraph, params: ParameterSet, schedule: &TrainSchedule) -> Self {
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(schedule.seed);
        dropout_rng.set_stream(1);
        Self {
            graph,
            optimizer: Optimizer::new(schedule.optimizer, &params),
            params,
            lr: schedule.initial_lr,
            policy: schedule.fg_weight_policy.clone(),
            dropout_rng,
        }
    }

    /// One optimizer step on a batch; returns the batch loss.
    pub fn step(&mut self, batch: &[&FramePair]) -> Result<f64, TrainError> {
        let images = batch_tensor(batch);
        let labels = batch_labels(batch);
        let w = fg_weight(batch.iter().map(|f| &f.mask), &self.policy);
        let trace = forward_train(self.graph, &mut self.params, &images, &mut self.dropout_rng)?;
        let probs = trace.probabilities(self.graph);
        let (loss, grad) = weighted_bce_with_grad(probs.data(), &labels, w);
        if !loss.is_finite() {
            return Ok(loss);
        }
        let d_probs = Tensor::from_vec(probs.shape(), grad);
        let grads = backward(self.graph, &self.params, &trace, d_probs);
        self.optimizer.apply(&mut self.params, &grads, self.lr);
        Ok(loss)
    }

    /// Mean weighted loss over `frames` in inference mode.
    pub fn evaluate(&self, frames: &[&FramePair], batch_size: usize) -> Result<f64, TrainError> {
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in frames.chunks(batch_size.max(1)) {
            let probs = forward(self.graph, &self.params, &batch_tensor(chunk))?;
            let w = fg_weight(chunk.iter().map(|f| &f.mask), &self.policy);
            total += weighted_bce(probs.data(), &batch_labels(chunk), w);
            batches += 1;
        }
        Ok(if batches == 0 { 0.0 } else { total / batches as f64 })
    }
}

fn check_frames(graph: &NetworkGraph, frames: &[FramePair]) -> Result<(), TrainError> {
    let size = graph.config.input_size;
    for f in frames {
        if f.image.width != size || f.image.height != size || f.mask.width != size || f.mask.height != size {
            return Err(TrainError::FrameSize {
                frame: f.source.stem(),
                actual: format!("{}x{}", f.image.width, f.image.height),
                expected: size,
            });
        }
    }
    Ok(())
}

pub fn train(
    graph: &NetworkGraph,
    params: ParameterSet,
    train_set: &[FramePair],
    val_set: &[FramePair],
    schedule: &TrainSchedule,
) -> Result<TrainOutcome, TrainError> {
    train_with(graph, params, train_set, val_set, schedule, |_, _| Control::Continue)
}

/// Like [`train`], calling `observer` after every epoch.
pub fn train_with(
    graph: &NetworkGraph,
    params: ParameterSet,
    train_set: &[FramePair],
    val_set: &[FramePair],
    schedule: &TrainSchedule,
    mut observer: impl FnMut(&EpochRecord, &ParameterSet) -> Control,
) -> Result<TrainOutcome, TrainError> {
    schedule.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset("training"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptyDataset("validation"));
    }
    check_frames(graph, train_set)?;
    check_frames(graph, val_set)?;
    params.check_against(graph)?;

    let mut trainer = Trainer::new(graph, params, schedule);
    let mut plateau = ReduceOnPlateau::new(schedule.plateau_factor, schedule.plateau_patience);
    let mut stopper = EarlyStopping::new(schedule.early_stop_patience);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let val_refs: Vec<&FramePair> = val_set.iter().collect();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut records = Vec::new();
    let mut best: Option<(f64, usize, ParameterSet)> = None;
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=schedule.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(schedule.batch_size).enumerate() {
            let batch: Vec<&FramePair> = chunk.iter().map(|&i| &train_set[i]).collect();
            let loss = trainer.step(&batch)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    batch: b + 1,
                    lr: trainer.lr,
                });
            }
            sum += loss;
            batches += 1;
        }
        let val_loss = trainer.evaluate(&val_refs, schedule.batch_size)?;
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                batch: 0,
                lr: trainer.lr,
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss: sum / batches as f64,
            val_loss,
            lr: trainer.lr,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        log::info!("{}", record.log_line());
        if best.as_ref().map_or(true, |(l, _, _)| val_loss < *l) {
            best = Some((val_loss, epoch, trainer.params.clone()));
        }
        let control = observer(&record, &trainer.params);
        records.push(record);
        trainer.lr = plateau.observe(val_loss, trainer.lr);
        if stopper.observe(val_loss) {
            stop_reason = StopReason::EarlyStop;
            break;
        }
        if control == Control::Halt {
            stop_reason = StopReason::Halted;
            break;
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params: trainer.params,
        best_params,
        history: TrainHistory {
            records,
            stop_reason,
            best_epoch,
        },
    })
}
