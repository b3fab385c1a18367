//! Library behind the `sbs` binary: argument parsing, subcommands and the
//! report types they emit.
//!
//! Exit codes: 0 on success, 2 when an input fails to load or validate, and
//! 3 when a theorem check runs but reports failures.

pub mod commands;
pub mod io;
pub mod theorems;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "sbs", version, about = "Perception-distorted MDPs and s-black-swan detection")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check that an MDP, distortion or policy file is well formed.
    Validate(commands::ValidateArgs),
    /// Optimal policy and values by backward induction.
    Solve(commands::SolveArgs),
    /// Build the perceived MDP and report perception gaps.
    Perceive(commands::PerceiveArgs),
    /// Detect s-black-swan state-action pairs.
    Detect(commands::DetectArgs),
    /// Estimate the perceived value from sampled trajectories.
    Estimate(commands::EstimateArgs),
    /// Run a theorem check on generated or constructed instances.
    Verify(theorems::VerifyArgs),
    /// Hitting-time bound and its Monte Carlo counterpart.
    Hitting(commands::HittingArgs),
}

/// Destination shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Outcome of a subcommand that ran to completion.
pub enum Outcome {
    Ok,
    TheoremFailed,
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("SBS_THREADS") {
        let n: usize = v.parse().map_err(|_| anyhow::anyhow!("SBS_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            anyhow::bail!("SBS_THREADS must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<Outcome> {
    configure_threads()?;
    match cli.command {
        Command::Validate(a) => commands::validate(a),
        Command::Solve(a) => commands::solve(a),
        Command::Perceive(a) => commands::perceive(a),
        Command::Detect(a) => commands::detect(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Verify(a) => theorems::verify(a),
        Command::Hitting(a) => commands::hitting(a),
    }
}

/// Parses `std::env::args`, runs the subcommand and maps the outcome to an
/// exit code.
pub fn main_entry() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::TheoremFailed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
