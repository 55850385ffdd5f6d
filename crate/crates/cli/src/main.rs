//! `slide`: scenario generation, scheduling, sweeps, oracle certification
//! and runtime benchmarks.
//!
//! Exit codes: 0 success, 1 certification failure, 2 input error,
//! 3 solver non-convergence when `--strict` is given.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slide_core::SlideError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Input(#[from] SlideError),
    #[error("{0}")]
    Usage(String),
    #[error("certification failed: {0}")]
    Certification(String),
    #[error("{0} layer solves did not converge")]
    NonConvergence(u64),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Certification(_) => 1,
            CliError::Input(_) | CliError::Usage(_) => 2,
            CliError::NonConvergence(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "slide", version, about = "Model downloading with overlapped inference: scheduling simulator")]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Print per-user details.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the bisection tolerance on the bandwidth fraction.
    #[arg(long)]
    eps: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a scenario file.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Schedule the users of a scenario file.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Scenario file written by `gen`.
        #[arg(long)]
        scenario: PathBuf,
        /// slide, dai, eba, gbmp, eecra or all.
        #[arg(long, default_value = "slide")]
        method: String,
        /// Exit with code 3 if any layer solve did not converge.
        #[arg(long)]
        strict: bool,
        /// Include wall times in the output.
        #[arg(long)]
        timing: bool,
    },
    /// Monte Carlo sweep over one scenario parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Overrides trials per point.
        #[arg(long)]
        trials: Option<usize>,
        /// Include wall times in the output.
        #[arg(long)]
        timing: bool,
    },
    /// Compare the scheduler and layer solver with brute-force oracles.
    Certify {
        #[command(flatten)]
        common: Common,
        /// Scheduling trials.
        #[arg(long)]
        trials: Option<usize>,
        /// Layer-solver trials (default: twice the scheduling trials when
        /// --trials is given).
        #[arg(long)]
        p2_trials: Option<usize>,
        #[arg(long)]
        max_users: Option<usize>,
        #[arg(long)]
        max_models: Option<usize>,
    },
    /// Time the greedy scheduler against branch and bound.
    Bench {
        #[command(flatten)]
        common: Common,
        /// User counts, comma separated.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        /// Model counts, comma separated.
        #[arg(long, value_delimiter = ',')]
        i: Option<Vec<usize>>,
        #[arg(long)]
        repeats: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
