//! `vptag`: few-shot sequence labeling from the command line.
//!
//! Subcommands: `train`, `eval`, `decode`, `synth-bench`, `inspect`.
//! Tables go to stdout (or `--out`); diagnostics go to stderr. Exit codes:
//! 0 success, 1 numeric/runtime failure, 2 usage/config/data error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use vptag::training::TrainError;
use vptag::{CorpusError, EvalError, SynthError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Data(_) => 2,
            CliError::Numeric(_) => 1,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Config(msg) => CliError::Config(msg),
            SynthError::Train(inner) => inner.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Tsv,
    Md,
}

#[derive(Parser)]
#[command(name = "vptag", version, about = "Few-shot slot tagging with projection-based emissions in a collapsed-transition CRF")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on source domains; writes a checkpoint and a history TSV.
    Train {
        /// Run configuration JSON.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's similarity metric.
        #[arg(long)]
        metric: Option<String>,
        /// Checkpoint path; the history lands next to it.
        #[arg(long, default_value = "checkpoint.json")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on an episode file.
    Eval {
        checkpoint: PathBuf,
        data: PathBuf,
        /// Append the O-X / X-O / X-X error-type table.
        #[arg(long)]
        errors: bool,
        /// Fine-tune on each support set for this many steps first.
        #[arg(long, default_value_t = 0)]
        finetune_steps: usize,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional run config supplying the eval averaging mode.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Viterbi-decode an episode file and emit per-token TSV.
    Decode {
        checkpoint: PathBuf,
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the synthetic metric-comparison experiment.
    SynthBench {
        /// Experiment configuration JSON; defaults to the frozen norm-skew
        /// setup over all metrics.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the number of seeds.
        #[arg(long)]
        seeds: Option<usize>,
        /// Restrict to these metrics (repeatable).
        #[arg(long)]
        metric: Vec<String>,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print dataset statistics for an episode file.
    Inspect { data: PathBuf },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            config,
            seed,
            metric,
            out,
        } => commands::cmd_train(&config, seed, metric, &out),
        Command::Eval {
            checkpoint,
            data,
            errors,
            finetune_steps,
            format,
            out,
            config,
        } => commands::cmd_eval(
            &checkpoint,
            &data,
            errors,
            finetune_steps,
            format,
            out.as_ref(),
            config.as_ref(),
        ),
        Command::Decode {
            checkpoint,
            data,
            out,
        } => commands::cmd_decode(&checkpoint, &data, out.as_ref()),
        Command::SynthBench {
            config,
            seeds,
            metric,
            format,
            out,
        } => commands::cmd_synth_bench(config.as_ref(), seeds, &metric, format, out.as_ref()),
        Command::Inspect { data } => commands::cmd_inspect(&data),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
