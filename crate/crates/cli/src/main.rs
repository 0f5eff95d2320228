//! `dladf` command-line tool.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dladf::eval::MethodId;

#[derive(Debug, Parser)]
#[command(name = "dladf", version, about = "Delayed-feedback CVR estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic click dataset (JSON Lines).
    Generate(GenerateArgs),
    /// Train one method on a dataset.
    Train(TrainArgs),
    /// Score trained CVR models on the dataset's held-out test set.
    Evaluate(EvaluateArgs),
    /// Run the (L, seed, method) grid and write result CSVs.
    Experiment(ExperimentArgs),
    /// Print estimator variances under the true CVR and propensity.
    VarianceReport(VarianceArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Run configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    method: MethodId,
    /// Output directory for model, report and loss curve.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset file whose header defines the test distribution.
    #[arg(long)]
    data: PathBuf,
    /// CVR model file; repeat to score several.
    #[arg(long, required = true)]
    model: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Output directory for the result CSVs.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: logical cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VarianceArgs {
    /// Supplies the clip threshold (from the nn-dla train section).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// CVR model, optionally followed by a propensity model.
    #[arg(long, required = true, num_args = 1..=2)]
    model: Vec<PathBuf>,
}

#[derive(Debug)]
pub struct CliError {
    code: u8,
    msg: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self { code: 1, msg: msg.into() }
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self { code: 2, msg: msg.into() }
    }

    pub fn from_config(e: dladf::Error) -> Self {
        Self::config(e.to_string())
    }

    pub fn from_runtime(e: dladf::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Experiment(a) => commands::experiment(a),
        Command::VarianceReport(a) => commands::variance_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
