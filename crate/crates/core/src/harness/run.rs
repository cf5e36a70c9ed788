//! Running one experiment end to end.
//!
//! Each run writes into `<out>/<run_dir_name(spec.name)>/`:
//! `result.json`, `selection.json`, `train.log` and `checkpoint/`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use super::{
    CategoryResult, DatasetSelector, ExperimentResult, ExperimentSpec, HarnessError, HistorySummary, RunStatus,
    VideoResult,
};
use crate::bundle::ArrayBundle;
use crate::data::{batch_tensor, load_pair, scan, select_frames, FramePair, SequenceIndex, SourceId};
use crate::metrics::{aggregate, evaluate_frame, video_report, AggregationScheme, FrameEvaluation};
use crate::model::{apply_pretrained_and_freeze, build_model, forward, NetworkGraph, ParameterSet};
use crate::train::{split_validation, train, TrainError};
use crate::viz::{threshold, DEFAULT_THRESHOLD};

/// Replaces the dataset root of every experiment when set.
pub const DATA_ROOT_ENV: &str = "FGSEG_DATA_ROOT";
pub const RESULT_FILE: &str = "result.json";
pub const SELECTION_FILE: &str = "selection.json";
pub const TRAIN_LOG_FILE: &str = "train.log";
const CHECKPOINT_DIR: &str = "checkpoint";

/// Frames used by a run, enough to re-evaluate it from its checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub dataset: DatasetSelector,
    pub training: Vec<SourceId>,
    pub validation: Vec<SourceId>,
    pub evaluation: Vec<SourceId>,
    /// `category/video` entries evaluated on their training frames.
    pub fallback_videos: Vec<String>,
}

pub fn run_dir_name(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_' | '=') { c } else { '_' })
        .collect()
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text).map_err(io(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Json {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Scans the selector's root and applies its category, video and class filters.
pub fn open_index(sel: &DatasetSelector) -> Result<SequenceIndex, HarnessError> {
    let mut index = scan(&sel.root, sel.kind)?;
    index.restrict(&sel.categories, &sel.videos)?;
    if !sel.classes.is_empty() {
        index = index.with_classes(&sel.classes)?;
    }
    Ok(index)
}

/// Held-out frames per video, falling back to the training frames where
/// nothing is left.
fn evaluation_ids(
    index: &SequenceIndex,
    selected: &[SourceId],
    sel: &DatasetSelector,
) -> (Vec<SourceId>, Vec<String>) {
    let used: BTreeSet<&SourceId> = selected.iter().collect();
    let mut out = Vec::new();
    let mut fallback = Vec::new();
    for video in &index.videos {
        let mut ids: Vec<SourceId> = video
            .eval_frames()
            .map(|f| index.source(video, f.frame))
            .filter(|id| !used.contains(id))
            .collect();
        if ids.is_empty() {
            log::warn!(
                "{}/{}: no held-out frames left; evaluating on the training frames",
                video.category,
                video.name
            );
            fallback.push(format!("{}/{}", video.category, video.name));
            ids = selected
                .iter()
                .filter(|s| s.category == video.category && s.video == video.name)
                .cloned()
                .collect();
        }
        if let Some(cap) = sel.eval_frames_per_video {
            if ids.len() > cap {
                let mut rng = ChaCha8Rng::seed_from_u64(sel.seed);
                rng.set_stream(u64::MAX);
                let mut keep = index::sample(&mut rng, ids.len(), cap).into_vec();
                keep.sort_unstable();
                ids = keep.into_iter().map(|i| ids[i].clone()).collect();
            }
        }
        out.extend(ids);
    }
    (out, fallback)
}

/// Thresholded per-frame evaluation, grouped by video and category in index
/// order.
pub fn evaluate_frames(
    graph: &NetworkGraph,
    params: &ParameterSet,
    index: &SequenceIndex,
    ids: &[SourceId],
    fallback_videos: &[String],
    batch_size: usize,
    scheme: AggregationScheme,
) -> Result<Vec<CategoryResult>, HarnessError> {
    let size = graph.config.input_size;
    let mut per_video: BTreeMap<(String, String), Vec<FrameEvaluation>> = BTreeMap::new();
    for chunk in ids.chunks(batch_size.max(1)) {
        let frames: Vec<FramePair> = chunk
            .iter()
            .map(|id| load_pair(index, id, size))
            .collect::<Result<_, _>>()?;
        let refs: Vec<&FramePair> = frames.iter().collect();
        let probs = forward(graph, params, &batch_tensor(&refs))?;
        for (i, f) in frames.iter().enumerate() {
            let p = probs.sample(i);
            let pred = threshold(p, size, size, DEFAULT_THRESHOLD).expect("default threshold is valid");
            let eval = evaluate_frame(&pred, p, &f.mask)?;
            per_video
                .entry((f.source.category.clone(), f.source.video.clone()))
                .or_default()
                .push(eval);
        }
    }
    let mut categories: Vec<CategoryResult> = Vec::new();
    for video in &index.videos {
        let Some(evals) = per_video.get(&(video.category.clone(), video.name.clone())) else {
            continue;
        };
        let vr = VideoResult {
            video: video.name.clone(),
            report: video_report(evals)?,
            eval_frames: evals.len(),
            eval_fallback: fallback_videos.contains(&format!("{}/{}", video.category, video.name)),
        };
        match categories.last_mut() {
            Some(c) if c.category == video.category => c.videos.push(vr),
            _ => categories.push(CategoryResult {
                category: video.category.clone(),
                report: vr.report.clone(),
                videos: vec![vr],
            }),
        }
    }
    for c in &mut categories {
        let reports: Vec<_> = c.videos.iter().map(|v| v.report.clone()).collect();
        c.report = aggregate(&reports, scheme)?;
    }
    Ok(categories)
}

struct Trained {
    categories: Vec<CategoryResult>,
    history: HistorySummary,
}

fn failure_stage(e: &HarnessError) -> &'static str {
    match e {
        HarnessError::Data(_) => "data",
        HarnessError::Model(_) => "model",
        HarnessError::Train(TrainError::Diverged { .. }) => "diverged",
        HarnessError::Train(_) => "training",
        HarnessError::Metrics(_) => "evaluation",
        _ => "io",
    }
}

fn execute(spec: &ExperimentSpec, sel: &DatasetSelector, dir: &Path, log: &mut Vec<String>) -> Result<Trained, HarnessError> {
    let graph = build_model(&spec.model)?;
    let index = open_index(sel)?;
    let selected = select_frames(&index, sel.frames_per_video, sel.seed)?;
    let frames: Vec<FramePair> = selected
        .iter()
        .map(|id| load_pair(&index, id, spec.model.input_size))
        .collect::<Result<_, _>>()?;
    let (train_idx, val_idx) = split_validation(&frames, sel.val_fraction, sel.seed);
    let (train_idx, val_idx) = if val_idx.is_empty() {
        log::warn!("too few frames for a validation split; validating on the training frames");
        (train_idx.clone(), train_idx)
    } else {
        (train_idx, val_idx)
    };
    let train_set: Vec<FramePair> = train_idx.iter().map(|&i| frames[i].clone()).collect();
    let val_set: Vec<FramePair> = val_idx.iter().map(|&i| frames[i].clone()).collect();
    let (evaluation, fallback) = evaluation_ids(&index, &selected, sel);
    let selection = Selection {
        dataset: sel.clone(),
        training: train_set.iter().map(|f| f.source.clone()).collect(),
        validation: val_set.iter().map(|f| f.source.clone()).collect(),
        evaluation: evaluation.clone(),
        fallback_videos: fallback.clone(),
    };
    write_json(&dir.join(SELECTION_FILE), &selection)?;

    let pretrained = match &spec.pretrained {
        Some(p) => Some(ArrayBundle::read(p)?),
        None => None,
    };
    let params = apply_pretrained_and_freeze(
        ParameterSet::init(&graph, spec.schedule.seed),
        pretrained.as_ref(),
        spec.model.frozen_blocks,
    )?;
    let outcome = train(&graph, params, &train_set, &val_set, &spec.schedule)?;
    log.extend(outcome.history.log_lines());
    let h = &outcome.history;
    let best = &h.records[h.best_epoch - 1];
    let history = HistorySummary {
        epochs: h.records.len(),
        best_epoch: h.best_epoch,
        best_val_loss: best.val_loss,
        final_train_loss: h.records.last().expect("one epoch").train_loss,
        stop_reason: h.stop_reason,
    };
    save_checkpoint(
        &outcome.best_params,
        &spec.model,
        &CheckpointMeta {
            best_epoch: h.best_epoch,
            val_loss: best.val_loss,
        },
        &dir.join(CHECKPOINT_DIR),
    )?;
    let categories = evaluate_frames(
        &graph,
        &outcome.best_params,
        &index,
        &evaluation,
        &fallback,
        spec.schedule.batch_size,
        spec.scheme,
    )?;
    Ok(Trained { categories, history })
}

/// Trains and evaluates `spec`, persisting artifacts under `out`. Errors do
/// not propagate: they produce a failed result.
pub fn run(spec: &ExperimentSpec, out: &Path) -> ExperimentResult {
    let started = Instant::now();
    let mut sel = spec.dataset.clone();
    if let Ok(root) = std::env::var(DATA_ROOT_ENV) {
        sel.root = PathBuf::from(root);
    }
    let dir = out.join(run_dir_name(&spec.name));
    let mut log_lines = Vec::new();
    let outcome = fs::create_dir_all(&dir)
        .map_err(io(&dir))
        .and_then(|_| execute(spec, &sel, &dir, &mut log_lines));
    let mut result = ExperimentResult {
        name: spec.name.clone(),
        status: RunStatus::Succeeded,
        scheme: spec.scheme,
        categories: Vec::new(),
        history: None,
        checkpoint: None,
        wall_time_s: 0.0,
        seed: spec.schedule.seed,
        spec: spec.clone(),
    };
    match outcome {
        Ok(t) => {
            log_lines.push(format!("stop_reason={:?}", t.history.stop_reason));
            result.categories = t.categories;
            result.history = Some(t.history);
            result.checkpoint = Some(PathBuf::from(CHECKPOINT_DIR));
        }
        Err(e) => {
            log::error!("experiment `{}` failed: {e}", spec.name);
            log_lines.push(format!("failed: {e}"));
            result.status = RunStatus::Failed {
                stage: failure_stage(&e).into(),
                reason: e.to_string(),
            };
        }
    }
    result.wall_time_s = started.elapsed().as_secs_f64();
    if dir.is_dir() {
        let mut text = log_lines.join("\n");
        text.push('\n');
        if let Err(e) = fs::write(dir.join(TRAIN_LOG_FILE), text) {
            log::error!("{}: {e}", dir.join(TRAIN_LOG_FILE).display());
        }
        if let Err(e) = write_json(&dir.join(RESULT_FILE), &result) {
            log::error!("{e}");
        }
    }
    result
}

/// Recomputes a run's category results from its checkpoint and selection.
pub fn reevaluate(run_dir: &Path) -> Result<Vec<CategoryResult>, HarnessError> {
    let result: ExperimentResult = read_json(&run_dir.join(RESULT_FILE))?;
    let selection: Selection = read_json(&run_dir.join(SELECTION_FILE))?;
    let ckpt = load_checkpoint(&run_dir.join(CHECKPOINT_DIR))?;
    let index = open_index(&selection.dataset)?;
    evaluate_frames(
        &ckpt.graph,
        &ckpt.params,
        &index,
        &selection.evaluation,
        &selection.fallback_videos,
        result.spec.schedule.batch_size,
        result.scheme,
    )
}

/// Every `*/result.json` under `dir`, ordered by experiment name.
pub fn load_results(dir: &Path) -> Result<Vec<ExperimentResult>, HarnessError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io(dir))? {
        let path = entry.map_err(io(dir))?.path().join(RESULT_FILE);
        if path.is_file() {
            out.push(read_json::<ExperimentResult>(&path)?);
        }
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}
