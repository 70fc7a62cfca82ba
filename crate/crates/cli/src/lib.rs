//! `signbart` command-line driver. The binary is a thin wrapper around
//! [`run`].
//!
//! Exit codes: 0 on success, 1 for usage and validation errors, 2 for
//! runtime failures (I/O, corrupt files, numeric blow-ups, failed gradient
//! checks). Every error is reported as a single `error[<kind>]: ...` line on
//! standard error.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use signbart::Error;

#[derive(Debug, Parser)]
#[command(name = "signbart", version, about = "Skeleton-based isolated sign recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic raw-pixel dataset.
    Synth(SynthArgs),
    /// Frame-normalize, part-normalize and select components.
    Preprocess(PreprocessArgs),
    /// Train a model from a run configuration.
    Train(TrainArgs),
    /// Report recall@k of a checkpoint on a labelled dataset.
    Eval(EvalArgs),
    /// Rank classes for every record of a dataset.
    Predict(PredictArgs),
    /// Count model parameters.
    Params(ParamsArgs),
    /// Compare autodiff gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_parser = clap::value_parser!(u32).range(2..))]
    pub classes: u32,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub samples: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// none, one-box, two-box or three-box.
    #[arg(long, default_value = "three-box")]
    pub mode: String,
    /// Comma-separated subset of body, left, right.
    #[arg(long, default_value = "body,left,right")]
    pub parts: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `data.train`.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Overrides `data.val`.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Overrides `data.out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    pub topk: Vec<usize>,
    /// Metrics file; defaults to `<ckpt>.metrics.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    /// Also write the predictions to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Run configuration; the built-in tiny model when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

/// What a command can fail with.
pub enum Failure {
    Lib(Error),
    /// Gradient check ran but did not pass.
    CheckFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, A>(args: I) -> ExitCode
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Params(a) => commands::params(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::CheckFailed) => {
            eprintln!("error[gradcheck]: gradient check failed");
            ExitCode::from(2)
        }
        Err(Failure::Lib(e)) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
