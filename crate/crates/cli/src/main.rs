use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use fgseg::data::{batch_tensor, load_pair, select_frames, synth_generate, DatasetKind, SourceId, SynthSpec};
use fgseg::harness::{
    emit_table, evaluate_frames, load_checkpoint, load_results, open_index, parse_experiment, parse_grid, run,
    DatasetSelector, ExperimentResult, ExperimentSpec, RunStatus, TableFormat, TableLayout,
};
use fgseg::metrics::AggregationScheme;
use fgseg::model::forward;
use fgseg::train::TrainSchedule;
use fgseg::viz::{blend, heatmap, threshold, write_outputs, FrameVisual, Visual, DEFAULT_ALPHA, DEFAULT_THRESHOLD};

#[derive(Parser)]
#[command(name = "fgseg", version, about = "Foreground segmentation training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Cdnet2014,
    Sbi2015,
    Cityscapes,
    Synthetic,
}

impl From<Kind> for DatasetKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Cdnet2014 => DatasetKind::Cdnet2014,
            Kind::Sbi2015 => DatasetKind::Sbi2015,
            Kind::Cityscapes => DatasetKind::Cityscapes,
            Kind::Synthetic => DatasetKind::Synthetic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

impl From<Format> for TableFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => TableFormat::Csv,
            Format::Markdown => TableFormat::Markdown,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    PerCategoryRows,
    VariantColumns,
}

impl From<Layout> for TableLayout {
    fn from(l: Layout) -> Self {
        match l {
            Layout::PerCategoryRows => TableLayout::PerCategoryRows,
            Layout::VariantColumns => TableLayout::VariantColumns,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    MeanOfVideos,
    PooledCounts,
}

impl From<Scheme> for AggregationScheme {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::MeanOfVideos => AggregationScheme::MeanOfVideos,
            Scheme::PooledCounts => AggregationScheme::PooledCounts,
        }
    }
}

/// Dataset slice shared by `eval` and `viz`.
#[derive(clap::Args)]
struct Slice {
    /// Dataset root directory.
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "cdnet2014")]
    kind: Kind,
    /// Restrict to these categories (repeatable).
    #[arg(long = "category")]
    categories: Vec<String>,
    /// Restrict to these videos (repeatable).
    #[arg(long = "video")]
    videos: Vec<String>,
    /// CityScapes foreground classes (repeatable).
    #[arg(long = "class")]
    classes: Vec<String>,
    /// Sample this many frames per video instead of the whole evaluation range.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl Slice {
    fn selector(&self) -> DatasetSelector {
        DatasetSelector {
            kind: self.kind.into(),
            root: self.dataset.clone(),
            categories: self.categories.clone(),
            videos: self.videos.clone(),
            classes: self.classes.clone(),
            seed: self.seed,
            ..DatasetSelector::default()
        }
    }

    fn ids(&self, index: &fgseg::data::SequenceIndex) -> Result<Vec<SourceId>> {
        Ok(match self.frames {
            Some(n) => select_frames(index, n, self.seed)?,
            None => index
                .videos
                .iter()
                .flat_map(|v| v.eval_frames().map(move |f| index.source(v, f.frame)))
                .collect(),
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one experiment.
    Train {
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Run every experiment of a grid and print the result table.
    Ablate {
        grid: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "markdown")]
        format: Format,
        #[arg(long, value_enum, default_value = "per-category-rows")]
        layout: Layout,
    },
    /// Evaluate a checkpoint on a dataset slice.
    Eval {
        checkpoint: PathBuf,
        #[command(flatten)]
        slice: Slice,
        #[arg(long, value_enum, default_value = "mean-of-videos")]
        scheme: Scheme,
        #[arg(long, value_enum, default_value = "markdown")]
        format: Format,
        #[arg(long, default_value_t = 4)]
        batch_size: usize,
    },
    /// Tabulate the results stored under a directory of runs.
    Report {
        results: PathBuf,
        #[arg(long, value_enum, default_value = "markdown")]
        format: Format,
        #[arg(long, value_enum, default_value = "per-category-rows")]
        layout: Layout,
    },
    /// Generate a synthetic sequence.
    Synth {
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write heatmap overlays and binary masks for a dataset slice.
    Viz {
        checkpoint: PathBuf,
        #[command(flatten)]
        slice: Slice,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn report_run(r: &ExperimentResult) {
    match &r.status {
        RunStatus::Succeeded => println!("{}: succeeded in {:.1}s", r.name, r.wall_time_s),
        RunStatus::Failed { stage, reason } => println!("{}: failed during {stage}: {reason}", r.name),
    }
}

fn cmd_train(config: &Path, out: &Path) -> Result<bool> {
    let spec = parse_experiment(&read(config)?).with_context(|| config.display().to_string())?;
    let result = run(&spec, out);
    report_run(&result);
    if result.succeeded() {
        print!(
            "{}",
            emit_table(&[result], TableLayout::PerCategoryRows, TableFormat::Markdown)?
        );
        Ok(true)
    } else {
        Ok(false)
    }
}

fn cmd_ablate(grid: &Path, out: &Path, format: Format, layout: Layout) -> Result<bool> {
    let specs = parse_grid(&read(grid)?).with_context(|| grid.display().to_string())?;
    log::info!("{} experiments", specs.len());
    let results: Vec<ExperimentResult> = specs
        .iter()
        .map(|s| {
            let r = run(s, out);
            report_run(&r);
            r
        })
        .collect();
    let all_ok = results.iter().all(|r| r.succeeded());
    print!("{}", emit_table(&results, layout.into(), format.into())?);
    Ok(all_ok)
}

fn cmd_eval(checkpoint: &Path, slice: &Slice, scheme: Scheme, format: Format, batch_size: usize) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let selector = slice.selector();
    let index = open_index(&selector)?;
    let ids = slice.ids(&index)?;
    if ids.is_empty() {
        bail!("the dataset slice contains no frames");
    }
    let categories = evaluate_frames(&ckpt.graph, &ckpt.params, &index, &ids, &[], batch_size, scheme.into())?;
    let result = ExperimentResult {
        name: checkpoint.display().to_string(),
        status: RunStatus::Succeeded,
        scheme: scheme.into(),
        categories,
        history: None,
        checkpoint: Some(checkpoint.to_path_buf()),
        wall_time_s: 0.0,
        seed: slice.seed,
        spec: ExperimentSpec {
            name: checkpoint.display().to_string(),
            preset: None,
            model: ckpt.config.clone(),
            schedule: TrainSchedule::default(),
            dataset: selector,
            scheme: scheme.into(),
            pretrained: None,
        },
    };
    print!("{}", emit_table(&[result], TableLayout::PerCategoryRows, format.into())?);
    Ok(())
}

fn cmd_synth(spec: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let spec: SynthSpec = match spec {
        Some(p) => toml::from_str(&read(p)?).with_context(|| p.display().to_string())?,
        None => SynthSpec::default(),
    };
    let manifest = synth_generate(&spec, seed, out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn cmd_viz(checkpoint: &Path, slice: &Slice, theta: f64, alpha: f64, out: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let index = open_index(&slice.selector())?;
    let ids = slice.ids(&index)?;
    let size = ckpt.config.input_size;
    let mut visuals = Vec::with_capacity(ids.len() * 2);
    for id in &ids {
        let pair = load_pair(&index, id, size)?;
        let probs = forward(&ckpt.graph, &ckpt.params, &batch_tensor(&[&pair]))?;
        let p = probs.sample(0);
        let overlay = blend(&pair.image.to_rgb8(), &heatmap(p)?, alpha)?;
        let mask = threshold(p, size, size, theta)?;
        for visual in [Visual::Overlay(overlay), Visual::Binary(mask)] {
            visuals.push(FrameVisual {
                source: id.clone(),
                width: size,
                height: size,
                visual,
            });
        }
    }
    for p in write_outputs(&visuals, out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Train { config, out } => cmd_train(config, out),
        Command::Ablate {
            grid,
            out,
            format,
            layout,
        } => cmd_ablate(grid, out, *format, *layout),
        Command::Eval {
            checkpoint,
            slice,
            scheme,
            format,
            batch_size,
        } => cmd_eval(checkpoint, slice, *scheme, *format, *batch_size).map(|_| true),
        Command::Report { results, format, layout } => load_results(results)
            .map_err(anyhow::Error::from)
            .and_then(|r| Ok(emit_table(&r, (*layout).into(), (*format).into())?))
            .map(|t| {
                print!("{t}");
                true
            }),
        Command::Synth { spec, seed, out } => cmd_synth(spec.as_deref(), *seed, out).map(|_| true),
        Command::Viz {
            checkpoint,
            slice,
            threshold,
            alpha,
            out,
        } => cmd_viz(checkpoint, slice, *threshold, *alpha, out).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            // Library errors already embed their source in the message.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
