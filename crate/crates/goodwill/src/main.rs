//! Thin CLI over the library pipelines.
//!
//! Exit status: 0 all tests passed, 2 config error, 3 numerical failure,
//! 4 at least one statistical test failed.

use clap::{Parser, Subcommand};
use goodwill::error::ErrorClass;
use goodwill::harness::{self, Command as Pipeline};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "goodwill",
    about = "Stochastic optimal advertising with delayed goodwill dynamics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Path to the experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: out/<digest>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (capped by numerics.max_workers).
    #[arg(long)]
    workers: Option<usize>,
    /// Replace numerics.seed before running.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Simulate goodwill paths and estimate the cost.
    Simulate(RunArgs),
    /// Solve the first-order adjoint pair and probe the second adjoint.
    Adjoint(RunArgs),
    /// Verify the maximum-principle variational inequality.
    CheckMp(RunArgs),
    /// Check the duality relations and the spike cost expansion.
    Expand(RunArgs),
    /// Improve the control by spike-variation descent.
    Optimize(RunArgs),
    /// Fit the spike-width scaling of the variation processes.
    Converge(RunArgs),
    /// Exhaustive scenario-tree search on a coarse grid.
    Oracle(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (pipeline, args) = match &cli.command {
        CliCommand::Simulate(a) => (Pipeline::Simulate, a),
        CliCommand::Adjoint(a) => (Pipeline::Adjoint, a),
        CliCommand::CheckMp(a) => (Pipeline::CheckMp, a),
        CliCommand::Expand(a) => (Pipeline::Expand, a),
        CliCommand::Optimize(a) => (Pipeline::Optimize, a),
        CliCommand::Converge(a) => (Pipeline::Converge, a),
        CliCommand::Oracle(a) => (Pipeline::Oracle, a),
    };

    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let config = match harness::load_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };

    match harness::run_command(
        &config,
        pipeline,
        args.out.as_deref(),
        args.workers,
        args.seed_override,
    ) {
        Ok(artifacts) => {
            println!(
                "wrote {} ({} files), digest {}",
                artifacts.out_dir.display(),
                artifacts.files.len(),
                artifacts.summary.digest
            );
            for test in &artifacts.summary.tests {
                println!(
                    "[{}] {}: {}",
                    if test.passed { "PASS" } else { "FAIL" },
                    test.name,
                    test.detail
                );
            }
            if artifacts.summary.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(4)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e.class() {
                ErrorClass::Config => ExitCode::from(2),
                ErrorClass::Numerical => ExitCode::from(3),
            }
        }
    }
}
