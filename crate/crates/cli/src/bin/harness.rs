//! Runs experiments described in TOML.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use knobtune::harness::{run_experiment, ExperimentSpec};
use log::{error, info};

#[derive(Debug, Parser)]
#[command(about = "Experiment runner for knobtune")]
struct Args {
    #[arg(long, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Runs one experiment spec and writes its CSV files.
    Run {
        spec: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Overrides the seed in the spec.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    env_logger::Builder::new().filter_level(args.log_level).init();
    let Command::Run { spec, out, seed } = args.command;
    let text = match std::fs::read_to_string(&spec) {
        Ok(t) => t,
        Err(e) => {
            error!("{}: {e}", spec.display());
            return ExitCode::FAILURE;
        }
    };
    let mut parsed = match ExperimentSpec::parse(&text) {
        Ok(s) => s,
        Err(e) => {
            error!("{}: {e}", spec.display());
            return ExitCode::FAILURE;
        }
    };
    if let Some(seed) = seed {
        parsed.seed = seed;
    }
    if let Err(e) = std::fs::create_dir_all(&out) {
        error!("{}: {e}", out.display());
        return ExitCode::FAILURE;
    }
    match run_experiment(&parsed, &out) {
        Ok(summary) => {
            info!("{} runs written to {}", summary.runs.len(), out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
