//! `flowlab` command-line harness.
//!
//! Every subcommand reads files or generator specs, writes its outputs plus a
//! `manifest.json` into `--out-dir`, and is deterministic given its inputs
//! and `--seed`. Exit codes: 0 success, 2 usage or config error, 3 numeric
//! failure, 4 I/O or format error.

mod commands;
mod inputs;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flowlab::Error;

#[derive(Debug, Parser)]
#[command(name = "flowlab", version, about = "Normalizing-flow likelihood experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Flat `key = value` config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model; writes model.flw and metrics.csv.
    Train(TrainArgs),
    /// Per-example likelihood breakdown and histograms for one or more datasets.
    Eval(EvalArgs),
    /// Second-order likelihood gap for a constant-volume model.
    PredictGap(PredictGapArgs),
    /// Dimensionality sweep on replicated two-moons data.
    SimulateBounds(SimulateBoundsArgs),
    /// Per-dimension moments of a dataset.
    Stats(StatsArgs),
    /// Draw samples through the inverse transform.
    Sample(SampleArgs),
    /// Hadamard, likelihood-ceiling, concentration and curvature checks.
    Checks(ChecksArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Built-in setup: two-moons or cv-gaussian.
    #[arg(long)]
    pub preset: Option<String>,
    /// Resume from this checkpoint (model, prior and optimizer state).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long, value_parser = ["nvp-exp", "nvp-sigmoid", "cv"])]
    pub variant: Option<String>,
    /// Standard deviation of the Gaussian prior.
    #[arg(long)]
    pub sigma_psi: Option<f64>,
    /// L2 coefficient on the parameters.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Repeat to evaluate several datasets on shared histogram bins.
    #[arg(long, required = true)]
    pub dataset: Vec<String>,
    /// Additional checkpoints forming an ensemble with `--checkpoint`.
    #[arg(long)]
    pub ensemble: Vec<PathBuf>,
    /// Gray the inputs towards 0.5 by this factor before evaluating.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictGapArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, conflicts_with = "alpha", required_unless_present = "alpha")]
    pub checkpoint: Option<PathBuf>,
    /// Per-channel coefficients, used instead of a checkpoint.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    #[arg(long)]
    pub moments_q: PathBuf,
    #[arg(long)]
    pub moments_p: PathBuf,
    #[arg(long)]
    pub sigma_psi: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateBoundsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',', default_value = "2,8,32,64")]
    pub dims: Vec<usize>,
    #[arg(long, default_value = "nvp-exp", value_parser = ["nvp-exp", "nvp-sigmoid", "cv"])]
    pub variant: String,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: String,
    /// Gray the data towards 0.5 by this factor first.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Also report latent-code statistics under this model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ChecksArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Points to check at; defaults to samples from the model.
    #[arg(long)]
    pub dataset: Option<String>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFiniteLoss { .. } | Error::SingularMatrix { .. } => 3,
        Error::Io(_)
        | Error::CorruptCheckpoint(_)
        | Error::VersionMismatch { .. }
        | Error::BadMagic { .. }
        | Error::TruncatedFile(_)
        | Error::Serialize(_) => 4,
        _ => 2,
    }
}

fn init_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("FLOWLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidConfig(format!("FLOWLAB_THREADS = {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidConfig(e.to_string()))
}

fn run(cli: &Cli) -> Result<(), Error> {
    init_threads()?;
    match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::PredictGap(a) => commands::predict_gap(a),
        Command::SimulateBounds(a) => commands::simulate(a),
        Command::Stats(a) => commands::stats(a),
        Command::Sample(a) => commands::sample(a),
        Command::Checks(a) => commands::checks(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
