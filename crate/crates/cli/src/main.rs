//! `rsp`: baseline training, sparse-exploration compression runs,
//! checkpoint evaluation and report rendering.
//!
//! Exit statuses: 0 success, 2 configuration or usage error, 3 numeric
//! failure (divergence, overflow), 1 anything else.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::{ArchChoice, DatasetKind, ExperimentConfig, Format};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] rsp_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use rsp_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(
                E::InvalidArgument(_) | E::Shape(_) | E::Structure { .. } | E::Data(_) | E::Checkpoint(_) | E::Serde(_),
            ) => 2,
            CliError::Core(_) | CliError::Io { .. } => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "rsp", version, about = "Sparse training and structured filter pruning for small CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a dense baseline (lambda = 0) and save it.
    TrainBaseline(Overrides),
    /// Explore, prune and fine-tune from a baseline checkpoint.
    Compress(Overrides),
    /// Accuracy, parameter and FLOPs counts of a checkpoint.
    Evaluate {
        #[command(flatten)]
        overrides: Overrides,
        /// Checkpoint to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Render a saved report as a table, CSV or JSON lines.
    Report {
        /// `report.json`, or a run directory containing one.
        path: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
}

/// Settings shared by the experiment commands. Flags win over the file.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    dataset: Option<DatasetKind>,
    /// Directory with the MNIST or CIFAR-10 files.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Architecture preset: lenet-small, vgg-tiny or resnet-tiny.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Minimum kept fraction of filters per layer (default 0.1).
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    lambda0: Option<f64>,
    /// Pick lambda0 from the grid of powers of ten.
    #[arg(long)]
    lambda_grid: bool,
    /// Explore/compress rounds (default 1).
    #[arg(long)]
    rounds: Option<usize>,
    /// Baseline and per-round exploration epochs.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    finetune_epochs: Option<usize>,
    /// Mini-batch size (default 64).
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Baseline checkpoint for `compress` (default: <out>/baseline.rspc).
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Train the baseline as part of `compress`.
    #[arg(long)]
    from_scratch: bool,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.dataset {
            c.dataset = v;
        }
        if let Some(v) = &self.data_dir {
            c.data_dir = Some(v.clone());
        }
        if let Some(v) = &self.arch {
            c.arch = ArchChoice::Preset(v.parse().map_err(|e| CliError::Config(format!("--arch: {e}")))?);
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.epsilon {
            c.rsp.epsilon = v;
        }
        if let Some(v) = self.lambda0 {
            c.rsp.lambda0 = v;
        }
        if self.lambda_grid {
            c.rsp.lambda_grid = true;
        }
        if let Some(v) = self.rounds {
            c.rsp.rounds = v;
        }
        if let Some(v) = self.epochs {
            c.train.epochs = v;
        }
        if let Some(v) = self.finetune_epochs {
            c.rsp.finetune_epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.train.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            c.train.learning_rate = v;
        }
        if let Some(v) = &self.out {
            c.out = v.clone();
        }
        if let Some(v) = self.format {
            c.format = v;
        }
        if let Some(v) = &self.baseline {
            c.baseline = Some(v.clone());
        }
        if self.from_scratch {
            c.from_scratch = true;
        }
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::TrainBaseline(o) => commands::train_baseline(&o.resolve()?),
        Command::Compress(o) => commands::compress(&o.resolve()?),
        Command::Evaluate { overrides, checkpoint } => commands::evaluate(&overrides.resolve()?, &checkpoint),
        Command::Report { path, format } => commands::report(&path, format),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
