//! Command-line surface tying the pipeline together.
//!
//! Commands: `synth | ingest | pretrain | eval | impute | report`.
//! Every command is a pure function of its files, flags, and seed; exit
//! codes are 0 (success), 1 (validation/config error), 2 (I/O error).

mod config;
mod corpus;
mod datagen;
mod evalcmd;
mod pretrain;
mod report;
#[cfg(test)]
pub(crate) mod testutil;

pub use config::RunConfig;
pub use corpus::{FEATURES_FILE, TEST_FILE, TRAIN_FILE, VAL_FILE};

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::data::DataError;
use crate::eval::EvalError;
use crate::model::ModelError;
use crate::numerics::NumericsError;
use crate::objectives::ObjectiveError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Io { .. } => 2,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { path, source } => Self::Io { path, source },
            other => Self::Config(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io { path, source } => Self::Io { path, source },
            other => Self::Config(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io { path, source } => Self::Io { path, source },
            other => Self::Config(other.to_string()),
        }
    }
}

impl From<ObjectiveError> for CliError {
    fn from(e: ObjectiveError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        Self::Config(e.to_string())
    }
}

/// Flags shared by every command.
#[derive(Debug, Args)]
pub struct Common {
    /// Key=value config file; flags override file entries.
    #[arg(long, global = false)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream the command uses.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker thread count (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Parser)]
#[command(
    name = "evseq",
    version,
    about = "Self-supervised pretraining and evaluation for irregular event time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus (train/val/test JSONL + feature table).
    Synth(datagen::SynthArgs),
    /// Build a corpus from an event JSONL file, fitting feature statistics.
    Ingest(datagen::IngestArgs),
    /// Pretrain an encoder on a corpus with a chosen objective.
    Pretrain(pretrain::PretrainArgs),
    /// Evaluate a checkpoint: linear probe, semi-supervised, or imputation.
    Eval(evalcmd::EvalArgs),
    /// Query imputed measurement values for a single stay.
    Impute(evalcmd::ImputeArgs),
    /// Aggregate metric reports into a comparison table.
    Report(report::ReportArgs),
}

fn configure_threads(threads: Option<usize>) -> Result<(), CliError> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    if rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .is_err()
    {
        eprintln!("warning: thread pool already initialized; --threads ignored");
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(args) => datagen::cmd_synth(args),
        Command::Ingest(args) => datagen::cmd_ingest(args),
        Command::Pretrain(args) => pretrain::cmd_pretrain(args),
        Command::Eval(args) => evalcmd::cmd_eval(args),
        Command::Impute(args) => evalcmd::cmd_impute(args),
        Command::Report(args) => report::cmd_report(args),
    }
}

/// Parses and runs a full command line (`args[0]` is the program name),
/// returning the process exit code. The binary is a thin wrapper around
/// this, and tests drive it in-process.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
