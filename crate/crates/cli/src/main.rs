//! `hmb`: command-line driver for the head-motion prediction benchmark.

mod commands;
mod config;
mod plot;
mod repro;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hmb_core::dataset::{SynthKind, TraceFormat};
use hmb_core::models::ModelKind;

use crate::config::{ExperimentConfig, Scale};
use crate::store::SaliencySource;

/// A problem with the request itself (flags, config, missing inputs), as
/// opposed to a failure while running it.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Parser, Debug)]
#[command(name = "hmb", version, about = "Head-motion prediction benchmark for 360° video")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// JSON experiment config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for evaluation, saliency and analysis.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Experiment directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Small grid, 64 units, 50 epochs (default).
    #[arg(long, global = true, conflicts_with = "paper_scale")]
    desk_scale: bool,
    /// 256×256 grid, 256 units, 500 epochs.
    #[arg(long, global = true)]
    paper_scale: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic traces and content saliency.
    Synth(SynthArgs),
    /// Import a trace CSV (and optional SALM content maps).
    Ingest(IngestArgs),
    /// Ground-truth saliency maps and per-video entropy.
    #[command(subcommand)]
    Saliency(SaliencyCommand),
    /// Train a model on the train split.
    Train(TrainArgs),
    /// Evaluate predictors on the test split.
    Evaluate(EvaluateArgs),
    /// Information-theoretic predictability analyses.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Render a curves or analysis CSV as a line chart.
    Plot(PlotArgs),
    /// Run a complete desk-scale pipeline for one figure.
    ReproFig(ReproArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// One or more of exploration, static_focus, moving_focus, ride.
    #[arg(long, value_delimiter = ',')]
    pub kind: Vec<SynthKind>,
    #[arg(long)]
    pub videos: Option<usize>,
    #[arg(long)]
    pub users: Option<usize>,
    /// Seconds per video.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Saliency grid as HEIGHTxWIDTH.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<[usize; 2]>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long, default_value = "csv_angles")]
    pub format: TraceFormat,
    /// Directory of `<video_id>.salm` content maps.
    #[arg(long)]
    pub saliency_dir: Option<PathBuf>,
    /// Videos held out for testing.
    #[arg(long, value_delimiter = ',')]
    pub test_videos: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum SaliencyCommand {
    /// Build ground-truth maps from all users' positions.
    Gt {
        #[arg(long, value_parser = parse_grid)]
        grid: Option<[usize; 2]>,
        #[arg(long)]
        sigma_deg: Option<f64>,
    },
    /// Mean ground-truth entropy per video and focus/exploration labels.
    Entropy {
        #[arg(long)]
        quantile: Option<f64>,
    },
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// pos-only, track, cvpr18i, mm18i, track-ablat-sal or track-ablat-fuse.
    pub model: ModelKind,
    #[arg(long, value_enum, default_value_t = SaliencySource::Content)]
    pub saliency: SaliencySource,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub units: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Keep every n-th training window per trace.
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CategorySource {
    Entropy,
    Manifest,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Comma-separated names such as static,pos-only,k-sal:5,track.
    #[arg(long, value_delimiter = ',')]
    pub predictors: Vec<String>,
    /// Maps for K-saliency-only peaks.
    #[arg(long, value_enum, default_value_t = SaliencySource::Gt)]
    pub peaks: SaliencySource,
    /// Maps fed to models; defaults to what each model was trained on.
    #[arg(long, value_enum)]
    pub saliency: Option<SaliencySource>,
    #[arg(long, value_enum, default_value_t = CategorySource::Entropy)]
    pub categories: CategorySource,
}

#[derive(Args, Debug, Clone)]
pub struct LagArgs {
    /// Largest lag in seconds.
    #[arg(long, default_value_t = 5.0)]
    pub max_lag: f64,
    /// Include s = 0.
    #[arg(long)]
    pub with_zero: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScalarizationArg {
    Value,
    Argmax,
}

#[derive(Subcommand, Debug)]
pub enum AnalyzeCommand {
    /// Mutual information between present and future positions.
    Mi {
        #[command(flatten)]
        lags: LagArgs,
        /// Report bits instead of values normalized by H(P_t).
        #[arg(long)]
        raw: bool,
    },
    /// Transfer entropy from saliency to position.
    Te {
        #[command(flatten)]
        lags: LagArgs,
        #[arg(long, value_enum, default_value_t = SaliencySource::Content)]
        saliency: SaliencySource,
        #[arg(long, value_enum, default_value_t = ScalarizationArg::Value)]
        scalarization: ScalarizationArg,
    },
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Defaults to `<out>/eval/curves.csv`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "macro")]
    pub aggregate: String,
    /// `.svg` or `.png`; defaults to the input path with `.svg`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    /// K-saliency-only error curves and their envelope.
    KSaliency,
    /// TRACK against the position-only and static baselines.
    TrackAvg,
    /// TRACK against its two ablations.
    Ablation,
    /// Mutual information against the prediction step.
    Mi,
    /// Transfer entropy against the prediction step.
    Te,
}

#[derive(Args, Debug)]
pub struct ReproArgs {
    #[arg(value_enum)]
    pub name: Figure,
}

fn parse_grid(s: &str) -> Result<[usize; 2], String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HEIGHTxWIDTH, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad grid size `{v}`: {e}"));
    let g = [parse(h)?, parse(w)?];
    if g[0] == 0 || g[1] == 0 {
        return Err("grid dimensions must be positive".into());
    }
    Ok(g)
}

/// Config file, then global flags.
fn resolve_config(g: &GlobalArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| ConfigError(format!("{e:#}")))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if g.paper_scale {
        cfg.scale = Scale::Paper;
    }
    if g.desk_scale {
        cfg.scale = Scale::Desk;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.global.jobs == 0 {
        return Err(ConfigError("--jobs must be at least 1".into()).into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(cli.global.jobs).build_global()?;
    let cfg = resolve_config(&cli.global)?;
    let out = cli.global.out.clone();
    match cli.command {
        Command::Synth(a) => commands::synth(&out, cfg, &a),
        Command::Ingest(a) => commands::ingest(&out, cfg, &a),
        Command::Saliency(c) => commands::saliency(&out, cfg, &c),
        Command::Train(a) => commands::train(&out, cfg, &a),
        Command::Evaluate(a) => commands::evaluate(&out, cfg, &a).map(|_| ()),
        Command::Analyze(c) => commands::analyze(&out, cfg, &c),
        Command::Plot(a) => commands::plot(&out, &cfg, &a),
        Command::ReproFig(a) => repro::run(&out, cfg, a.name),
    }
}

/// Exit status 2 for request problems, 1 for runtime failures.
fn exit_code(e: &anyhow::Error) -> u8 {
    let config = e.chain().any(|c| {
        c.is::<ConfigError>()
            || matches!(
                c.downcast_ref::<hmb_core::Error>(),
                Some(
                    hmb_core::Error::InvalidArgument(_)
                        | hmb_core::Error::UnknownVideo(_)
                        | hmb_core::Error::Untrained
                        | hmb_core::Error::MissingSaliency(_)
                )
            )
    });
    if config {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
