//! `fdvae` — train, evaluate, and report on fairness-aware disentangling
//! VAEs from the command line.
//!
//! Every failure exits with a class-coded status and a single-line
//! diagnostic on stderr of the form `error[<class>]: <message>`:
//!
//! | class         | exit | meaning                                        |
//! |---------------|------|------------------------------------------------|
//! | ConfigError   | 2    | bad flags, config schema, overrides, variants  |
//! | DataError     | 3    | datasets, logs, or run artifacts missing/broken|
//! | TrainingError | 4    | optimization or model/checkpoint failures      |

mod commands;

use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use fdvae::experiments::ExperimentError;
use fdvae::metrics::MetricError;
use fdvae::plot::PlotError;
use fdvae::train::TrainError;

#[derive(Debug, Parser)]
#[command(
    name = "fdvae",
    version,
    about = "Fairness-aware disentangling VAE: data preparation, two-phase training, \
             group-fairness evaluation, experiment matrices, and reports"
)]
pub struct Cli {
    /// Print extra progress detail (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Materialize the dataset a config describes and write a split summary.
    PrepareData(PrepareDataArgs),
    /// Train the representation phase (encoder/decoder/discriminator/heads).
    TrainRepr(TrainPhaseArgs),
    /// Train the downstream heads on existing representation checkpoints.
    TrainDownstream(TrainPhaseArgs),
    /// Compute group-fairness metrics from a prediction log or a run directory.
    Evaluate(EvaluateArgs),
    /// Run several experiment configs (all their seeds) and aggregate results.
    RunMatrix(RunMatrixArgs),
    /// Run the standard ablation ladder derived from a base fdvae config.
    Ablate(AblateArgs),
    /// Export per-subspace embeddings and their 2-D projection for a run.
    ExportEmbeddings(ExportEmbeddingsArgs),
    /// Aggregate finished runs into a results table and plot files.
    Report(ReportArgs),
}

/// Flags shared by every config-driven subcommand.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Path to the experiment config (TOML).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Dotted-path config override, e.g. `--set schedule.batch_size=16`
    /// (repeatable; unknown keys are rejected).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct PrepareDataArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output root (defaults to $FDVAE_OUTPUT_ROOT, then ./runs).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainPhaseArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output root (defaults to $FDVAE_OUTPUT_ROOT, then ./runs).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed to run (repeatable; defaults to every seed in the config).
    #[arg(long)]
    pub seed: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Compute metrics from an existing prediction log (CSV).
    #[arg(long, conflicts_with = "run", required_unless_present = "run")]
    pub predictions: Option<PathBuf>,
    /// Re-evaluate a finished run directory from its checkpoints.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Config for --run (defaults to the run directory's config copy).
    #[arg(long, requires = "run")]
    pub config: Option<PathBuf>,
    /// Dotted-path config override for --run (repeatable). The resulting
    /// config must still hash-match the run's checkpoints.
    #[arg(long = "set", value_name = "KEY=VALUE", requires = "run")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunMatrixArgs {
    /// Experiment config file (repeatable; each runs all its seeds).
    #[arg(short, long = "config", required = true)]
    pub configs: Vec<PathBuf>,
    /// Dotted-path config override applied to every config (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output root (defaults to $FDVAE_OUTPUT_ROOT, then ./runs).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Maximum parallel worker processes (one config per worker).
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output root (defaults to $FDVAE_OUTPUT_ROOT, then ./runs).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Args)]
pub struct ExportEmbeddingsArgs {
    /// Run directory (…/<label>/seed-<N>) holding representation checkpoints.
    #[arg(long)]
    pub run: PathBuf,
    /// Config (defaults to the run directory's config copy).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-path config override (repeatable). The resulting config must
    /// still hash-match the run's checkpoints.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Which dataset split to embed.
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    pub split: SplitChoice,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories, experiment directories, or whole output roots.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Directory that receives the table and plot files.
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    /// Invocation problems clap cannot see (bad flag combinations, domains).
    #[error("{0}")]
    Usage(String),
    /// A run artifact exists but cannot be parsed.
    #[error("malformed artifact {path}: {detail}")]
    Artifact { path: String, detail: String },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("worker process failed for config {config}: {detail}")]
    Worker { config: String, detail: String },
}

impl CliError {
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Experiment(e) => experiment_class(e),
            CliError::Train(_) => "TrainingError",
            CliError::Metric(_) => "DataError",
            CliError::Plot(_) => "DataError",
            CliError::Usage(_) => "ConfigError",
            CliError::Artifact { .. } => "DataError",
            CliError::Io { .. } => "DataError",
            CliError::Worker { .. } => "TrainingError",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            "ConfigError" => 2,
            "DataError" => 3,
            _ => 4,
        }
    }
}

fn experiment_class(err: &ExperimentError) -> &'static str {
    match err {
        ExperimentError::ConfigParse { .. }
        | ExperimentError::SchemaVersion { .. }
        | ExperimentError::InvalidOverride { .. }
        | ExperimentError::InconsistentConfig(_)
        | ExperimentError::InvalidValue(_)
        | ExperimentError::EmptyRows => "ConfigError",
        ExperimentError::Data(_)
        | ExperimentError::MissingMetricsFile { .. }
        | ExperimentError::Io { .. }
        | ExperimentError::Serde(_)
        | ExperimentError::Metric(_) => "DataError",
        ExperimentError::Train(_) | ExperimentError::Model(_) | ExperimentError::Tensor(_) => {
            "TrainingError"
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = commands::dispatch(cli) {
        let message = err.to_string().replace('\n', "; ");
        eprintln!("error[{}]: {message}", err.class());
        std::process::exit(err.exit_code());
    }
}
