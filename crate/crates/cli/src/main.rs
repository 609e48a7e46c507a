//! zfepr: simulate and analyze zero-field hyperfine spectroscopy of a spin
//! ensemble in a tunable microwave cavity.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::{CliError, Result};

#[derive(Parser)]
#[command(
    name = "zfepr",
    version,
    about = "Zero-field hyperfine cavity-EPR simulation and fitting",
    propagate_version = true
)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Random seed (overrides the config seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for Monte-Carlo sampling (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Zero-field energy levels of each configured site (CSV).
    Levels,
    /// Stick spectrum of collective coupling strengths (CSV).
    Transitions,
    /// Cavity-tuning sweep: peak transmission and Q per step (CSV).
    Sweep,
    /// Monte-Carlo inhomogeneous line profile (CSV).
    Lineshape,
    /// Refine hyperfine/quadrupole entries against observed lines (JSON).
    Fit,
    /// Photon/population/coupling budget report (CSV).
    Budget,
    /// Reduce a measured transmission CSV to centre, peak and Q.
    Ingest {
        /// CSV with columns frequency_mhz, s21_squared.
        path: PathBuf,
    },
}

fn run(cli: &Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => Some(config::load_run_config(path)?),
        None => None,
    };

    let threads = cli.threads.or(config.as_ref().and_then(|c| c.file.threads));
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        // Ignore the error if a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let need_config = || -> Result<&config::RunConfig> {
        config
            .as_ref()
            .ok_or_else(|| CliError::config("this command requires --config"))
    };

    match &cli.command {
        Command::Levels => {
            let cfg = need_config()?;
            commands::cmd_levels(cfg, cli.out.as_deref(), cfg.seed(cli.seed))
        }
        Command::Transitions => {
            let cfg = need_config()?;
            commands::cmd_transitions(cfg, cli.out.as_deref(), cfg.seed(cli.seed))
        }
        Command::Sweep => {
            let cfg = need_config()?;
            commands::cmd_sweep(cfg, cli.out.as_deref(), cfg.seed(cli.seed))
        }
        Command::Lineshape => {
            let cfg = need_config()?;
            commands::cmd_lineshape(cfg, cli.out.as_deref(), cfg.seed(cli.seed))
        }
        Command::Fit => {
            let cfg = need_config()?;
            commands::cmd_fit(cfg, cli.out.as_deref(), cfg.seed(cli.seed))
        }
        Command::Budget => {
            let cfg = need_config()?;
            commands::cmd_budget(cfg, cli.out.as_deref(), cfg.seed(cli.seed))
        }
        Command::Ingest { path } => {
            commands::cmd_ingest(path, cli.out.as_deref(), config.as_ref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
