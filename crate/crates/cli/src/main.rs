use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use lanefr::eval::{self, MetricsReport, PredictionFile, DEFAULT_KS, MISS_THRESHOLD, PREDICTION_FORMAT_VERSION};
use lanefr::frm::Ablation;
use lanefr::model::{Model, PredictionSet};
use lanefr::numkit::Checkpoint;
use lanefr::scene::{self, generate_scene, read_dataset, write_dataset, ScenarioKind, Scene, SceneParams, Split};
use lanefr::training::{self, losses_to_csv, TrainConfig, TrainError};

#[derive(Debug, Parser)]
#[command(name = "lanefr", version, about = "Lane-conditioned multi-agent trajectory prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset (JSON lines).
    Generate(GenerateArgs),
    /// Train a model; writes a checkpoint and a CSV loss curve.
    Train(TrainArgs),
    /// Score a checkpoint, a predictions file or the constant-velocity baseline.
    Eval(EvalArgs),
    /// Write ranked trajectory samples for every scene.
    Predict(PredictArgs),
    /// Write one SVG per scene.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Merge,
    Intersection,
    Follow,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "merge")]
    kind: KindArg,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// First scene seed; defaults to the split's seed range.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 2)]
    agents: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// TOML training configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Loss curve path; defaults to the checkpoint path with a `.csv` extension.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `full` or `+`-joined ablation flags, e.g. `no_fr+symmetric`.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, group = "source")]
    checkpoint: Option<PathBuf>,
    #[arg(long, group = "source")]
    predictions: Option<PathBuf>,
    /// Score the constant-velocity baseline.
    #[arg(long, group = "source")]
    baseline: bool,
    /// Metrics file; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Samples drawn per agent; reported k values are those of 1, 5, 6 not above it.
    #[arg(long, default_value_t = 6)]
    samples: usize,
    #[arg(long, default_value_t = MISS_THRESHOLD)]
    miss_threshold: f64,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    samples: usize,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, group = "source")]
    checkpoint: Option<PathBuf>,
    #[arg(long, group = "source")]
    predictions: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    samples: usize,
    /// Plot at most this many scenes.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Divergence(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } => CliError::Divergence(e.to_string()),
            TrainError::Io { .. } | TrainError::Config(_) | TrainError::EmptyDataset => CliError::Io(e.to_string()),
            TrainError::Model(_) => CliError::Other(e.to_string()),
        }
    }
}

impl From<eval::EvalError> for CliError {
    fn from(e: eval::EvalError) -> Self {
        match e {
            eval::EvalError::Model(_) => CliError::Other(e.to_string()),
            eval::EvalError::Threshold(_) | eval::EvalError::ZeroK => CliError::Usage(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(parent) => fs::create_dir_all(parent).map_err(|e| io_err(parent, e)),
        None => Ok(()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    create_parent(path)?;
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn load_scenes(path: &Path) -> Result<Vec<Scene>, CliError> {
    read_dataset(path).map_err(|e| CliError::Io(e.to_string()))
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    let ckpt = Checkpoint::load(path).map_err(|e| io_err(path, e))?;
    Model::from_checkpoint(&ckpt).map_err(|e| io_err(path, e))
}

fn load_predictions(path: &Path) -> Result<PredictionFile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let file: PredictionFile = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
    if file.format_version != PREDICTION_FORMAT_VERSION {
        return Err(io_err(
            path,
            format!("unsupported predictions format version {} (expected {PREDICTION_FORMAT_VERSION})", file.format_version),
        ));
    }
    Ok(file)
}

fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let kind = match args.kind {
        KindArg::Merge => ScenarioKind::Merge,
        KindArg::Intersection => ScenarioKind::Intersection,
        KindArg::Follow => ScenarioKind::Follow,
    };
    let split = match args.split {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
    };
    let params = SceneParams {
        num_agents: args.agents,
        ..SceneParams::default()
    };
    params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let seeds = match args.seed {
        Some(s) => s..s + args.count as u64,
        None => scene::split_seeds(split, args.count),
    };
    let scenes = seeds
        .map(|s| generate_scene(kind, s, params))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Other(e.to_string()))?;
    create_parent(&args.out)?;
    write_dataset(&scenes, &args.out).map_err(|e| CliError::Io(e.to_string()))?;
    eprintln!("wrote {} {} scenes to {}", scenes.len(), kind.name(), args.out.display());
    Ok(())
}

fn train(args: TrainArgs) -> Result<(), CliError> {
    let mut config = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(v) = &args.variant {
        config.ablation = Ablation::from_variant(v).map_err(CliError::Usage)?;
    }
    if args.max_steps.is_some() {
        config.max_steps = args.max_steps;
    }
    let scenes = load_scenes(&args.dataset)?;
    let outcome = training::train(&scenes, &config, |r| {
        if r.step % 50 == 0 {
            eprintln!("step {:>5}  nll {:.4}  kl {:.4}  recon {:.4}  total {:.4}", r.step, r.nll, r.kl, r.recon, r.total);
        }
    })?;
    let csv = args.loss_csv.unwrap_or_else(|| args.out.with_extension("csv"));
    create_parent(&args.out)?;
    outcome.checkpoint(&config).save(&args.out).map_err(|e| io_err(&args.out, e))?;
    write_file(&csv, &losses_to_csv(&outcome.history))?;
    eprintln!("trained {} steps; checkpoint {}, losses {}", outcome.history.len(), args.out.display(), csv.display());
    Ok(())
}

fn reported_ks(samples: usize) -> Result<Vec<usize>, CliError> {
    if samples == 0 {
        return Err(CliError::Usage("--samples must be positive".into()));
    }
    Ok(DEFAULT_KS.iter().copied().filter(|&k| k <= samples).collect())
}

fn evaluate(args: EvalArgs) -> Result<(), CliError> {
    let scenes = load_scenes(&args.dataset)?;
    let ks = reported_ks(args.samples)?;
    let (preds, variant): (Vec<PredictionSet>, String) = if let Some(p) = &args.checkpoint {
        let model = load_model(p)?;
        (eval::predict_all(&model, &scenes, args.samples, args.seed)?, model.config.ablation.variant_name())
    } else if let Some(p) = &args.predictions {
        let file = load_predictions(p)?;
        (file.aligned_to(&scenes)?, file.variant)
    } else if args.baseline {
        let preds = scenes.iter().map(|s| eval::constant_velocity_baseline(s, args.samples)).collect();
        (preds, "constant_velocity".to_string())
    } else {
        return Err(CliError::Usage("one of --checkpoint, --predictions or --baseline is required".into()));
    };
    let report: MetricsReport = eval::score_with_threshold(&scenes, &preds, &ks, &variant, args.miss_threshold)?;
    let text = report.to_json();
    match &args.out {
        Some(path) => write_file(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn predict(args: PredictArgs) -> Result<(), CliError> {
    if args.samples == 0 {
        return Err(CliError::Usage("--samples must be positive".into()));
    }
    let scenes = load_scenes(&args.dataset)?;
    let model = load_model(&args.checkpoint)?;
    let file = PredictionFile {
        format_version: PREDICTION_FORMAT_VERSION,
        variant: model.config.ablation.variant_name(),
        seed: args.seed,
        scenes: eval::predict_all(&model, &scenes, args.samples, args.seed)?,
    };
    let text = serde_json::to_string(&file).map_err(|e| CliError::Other(e.to_string()))?;
    write_file(&args.out, &text)
}

fn plot(args: PlotArgs) -> Result<(), CliError> {
    let mut scenes = load_scenes(&args.dataset)?;
    if let Some(limit) = args.limit {
        scenes.truncate(limit);
    }
    let preds: Option<Vec<PredictionSet>> = if let Some(p) = &args.checkpoint {
        Some(eval::predict_all(&load_model(p)?, &scenes, args.samples, args.seed)?)
    } else if let Some(p) = &args.predictions {
        Some(load_predictions(p)?.aligned_to(&scenes)?)
    } else {
        None
    };
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    for (i, s) in scenes.iter().enumerate() {
        let svg = eval::scene_svg(s, preds.as_ref().map(|p| &p[i]));
        let path = args.out.join(format!("{}_{}.svg", s.scenario_kind.name(), s.seed));
        write_file(&path, &svg)?;
    }
    eprintln!("wrote {} plots to {}", scenes.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => evaluate(a),
        Command::Predict(a) => predict(a),
        Command::Plot(a) => plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
