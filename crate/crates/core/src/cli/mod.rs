//! Command-line experiment runner.
//!
//! Exit codes: 0 success, 1 failed audit or I/O error, 2 invalid or rejected
//! configuration, 3 divergence.

pub mod audits;
pub mod config;
pub mod experiment;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Error;
pub use audits::{run_audit, AuditReport, AuditRequest};
pub use config::{build_points, ExperimentConfig};
pub use experiment::{regenerate_reports, run_experiment, RunFailure, RunOutcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "ecsgd",
    version,
    about = "Simulate delayed, compressed and local SGD"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment grid described by a TOML config.
    Run {
        config: PathBuf,
        /// worker threads; defaults to the available parallelism
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run an audit suite and print a JSON report.
    Audit {
        /// compressor, noise, lemma-dsgd, lemma-ecsgd, lemma-local or descent
        suite: String,
        /// draws per probe (compressor, noise) or seeds (other suites)
        #[arg(long)]
        trials: usize,
        #[arg(long, default_value_t = 200)]
        horizon: u64,
        /// constant stepsize; defaults to the admissible cap
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rebuild the cross-point reports of an output directory.
    Report { dir: PathBuf },
}

/// Exit code for an error raised before or during a run.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_)
        | Error::InvalidParameter(_)
        | Error::ConfigurationRejected(_)
        | Error::RequiresStrongConvexity(_)
        | Error::DegenerateDesign { .. } => EXIT_INVALID,
        Error::Diverged { .. } => EXIT_DIVERGED,
        _ => EXIT_FAILURE,
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    match serde_json::to_string_pretty(value) {
        Ok(s) => println!("{s}"),
        Err(e) => eprintln!("error: {e}"),
    }
}

pub fn execute(cli: Cli) -> i32 {
    match cli.command {
        Command::Run { config, jobs } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {}: {e}", config.display());
                    return exit_code(&e);
                }
            };
            match run_experiment(&cfg, jobs) {
                Ok(outcome) => {
                    println!(
                        "wrote {} points x {} seeds to {}",
                        outcome.manifest.points.len(),
                        outcome.manifest.seeds.len(),
                        outcome.output.display()
                    );
                    EXIT_OK
                }
                Err(RunFailure { run_id, error }) => {
                    match run_id {
                        Some(id) => eprintln!("error: run {id}: {error}"),
                        None => eprintln!("error: {error}"),
                    }
                    exit_code(&error)
                }
            }
        }
        Command::Audit {
            suite,
            trials,
            horizon,
            gamma,
            seed,
        } => {
            let req = AuditRequest {
                suite,
                trials,
                horizon,
                gamma,
                seed,
            };
            match run_audit(&req) {
                Ok(report) => {
                    print_json(&report);
                    if report.passed {
                        EXIT_OK
                    } else {
                        EXIT_FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_code(&e)
                }
            }
        }
        Command::Report { dir } => match regenerate_reports(&dir) {
            Ok(reports) => {
                print_json(&reports);
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit_code(&e)
            }
        },
    }
}

pub fn main() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => execute(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            }
        }
    }
}
