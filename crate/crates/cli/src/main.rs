//! Command-line driver for the stochastic heat equation engine.
//!
//! `shesim run --experiment NAME [--config FILE] [flags]` executes one
//! registered experiment and writes its CSV tables plus a manifest;
//! `shesim list` prints the registry.
//!
//! Exit codes: 0 the experiment's built-in assertion passed, 1 it failed,
//! 2 configuration error, 3 runtime error.

use clap::{Parser, Subcommand};
use shesim_core::runner::{self, config::Config, RunnerError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "shesim",
    version,
    about = "Stochastic heat equation simulation and verification engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one registered experiment.
    Run {
        /// Experiment name (see `shesim list`).
        #[arg(long)]
        experiment: Option<String>,
        /// Configuration file (flat key=value with [section] headers).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed (overrides run.seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Ensemble size (overrides run.paths).
        #[arg(long)]
        paths: Option<usize>,
        /// Spatial cells (overrides grid.n_space).
        #[arg(long)]
        grid: Option<usize>,
        /// Output directory (overrides run.out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (overrides run.workers).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print the experiment registry.
    List,
}

fn run_command(cmd: Command) -> Result<bool, RunnerError> {
    match cmd {
        Command::List => {
            for info in runner::registry() {
                println!("{:<20} {}", info.name, info.statement);
            }
            Ok(true)
        }
        Command::Run {
            experiment,
            config,
            seed,
            paths,
            grid,
            out,
            workers,
        } => {
            let mut cfg = match config {
                Some(path) => Config::from_file(&path)?,
                None => Config::default(),
            };
            if let Some(name) = experiment {
                cfg.set("run.experiment", name);
            }
            if let Some(seed) = seed {
                cfg.set("run.seed", seed.to_string());
            }
            if let Some(paths) = paths {
                cfg.set("run.paths", paths.to_string());
            }
            if let Some(n) = grid {
                cfg.set("grid.n_space", n.to_string());
            }
            if let Some(dir) = out {
                cfg.set("run.out", dir.display().to_string());
            }
            if let Some(w) = workers {
                cfg.set("run.workers", w.to_string());
            }
            let (outcome, manifest, out_dir) = runner::run(&mut cfg)?;
            for line in &outcome.lines {
                println!("{line}");
            }
            println!(
                "outputs: {} file(s) under {} (config checksum sha256:{})",
                manifest.outputs.len(),
                out_dir.display(),
                manifest.config_checksum
            );
            Ok(outcome.passed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_command(cli.command) {
        Ok(true) => ExitCode::from(0),
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                RunnerError::Config(_) => ExitCode::from(2),
                RunnerError::Runtime(_) | RunnerError::Io(_) => ExitCode::from(3),
            }
        }
    }
}
