//! `vgame`: simulate, solve and verify stochastic Volterra games.
//!
//! Exit codes: 0 success, 1 verification found failing checks, 2 config
//! error, 3 numerical failure, 4 I/O error, 5 unreadable candidate.

mod commands;
mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Format, Overrides, Settings};
use error::CliError;

#[derive(Parser)]
#[command(name = "vgame", version, about = "Stochastic Volterra games under time-changed Levy noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in scenario name or scenario file (overrides the config).
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    /// Number of grid cells N.
    #[arg(long = "grid-n")]
    grid_n: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the noise ensemble and the forward state at the starting controls.
    Simulate(Common),
    /// Search for a Nash equilibrium and write the candidate, trace and residuals.
    Solve(Common),
    /// Run the sufficient, saddle and oracle checks on a candidate.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Candidate JSON written by `solve`.
        #[arg(long)]
        candidate: PathBuf,
    },
    /// Print the built-in scenario names.
    ListScenarios,
}

fn settings(c: Common) -> Result<Settings, CliError> {
    let cfg = config::load(c.config.as_deref())?;
    let base = c
        .config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default();
    config::resolve(
        cfg,
        Overrides {
            scenario: c.scenario,
            seed: c.seed,
            paths: c.paths,
            grid_n: c.grid_n,
            out: c.out,
            workers: c.workers,
            format: c.format,
        },
        &base,
    )
}

fn in_pool<T: Send>(s: &Settings, f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(s.workers)
        .build()
        .map_err(|e| CliError::Config(format!("workers: {e}")))?;
    pool.install(f)
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Simulate(c) => {
            let s = settings(c)?;
            in_pool(&s, || commands::simulate(s.clone()))?;
        }
        Command::Solve(c) => {
            let s = settings(c)?;
            in_pool(&s, || commands::solve(s.clone()))?;
        }
        Command::Verify { common, candidate } => {
            let s = settings(common)?;
            return in_pool(&s, || commands::verify(s.clone(), &candidate));
        }
        Command::ListScenarios => commands::list_scenarios(),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("vgame: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
