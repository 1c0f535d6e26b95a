//! Command-line front end: configuration loading, the four pipelines
//! (`spectral`, `slab`, `evolve`, `verify`) and artifact serialization.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod verify;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, CliResult};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "TOADWAVE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "toadwave",
    version,
    about = "Travelling waves of a trait-structured invasion model"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Homotopy parameter for `spectral` and `slab` (overrides the config).
    #[arg(long, global = true)]
    pub tau: Option<f64>,

    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Run a single `verify` suite.
    #[arg(long, global = true)]
    pub only: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Dispersion curve and minimal speed.
    Spectral,
    /// Travelling waves on bounded slabs.
    Slab,
    /// Time-dependent simulation and front tracking.
    Evolve,
    /// Consolidated invariant checks.
    Verify,
}

/// Configuration after applying command-line overrides, validated.
pub fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(tau) = cli.tau {
        config.spectral.tau = tau;
        config.slab.tau = tau;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

/// Runs one command and returns the line printed on success.
pub fn run(cli: &Cli) -> CliResult<String> {
    let config = resolve_config(cli)?;
    if cli.only.is_some() && cli.command != Command::Verify {
        return Err(CliError::Config("--only applies to verify".into()));
    }
    let dir = config.output_dir.display();
    Ok(match cli.command {
        Command::Spectral => {
            let o = commands::cmd_spectral(&config)?;
            format!(
                "c* = {} at lambda* = {}; wrote {} files to {dir}",
                o.min_speed.c_star,
                o.min_speed.lambda_star,
                o.files.len()
            )
        }
        Command::Slab => {
            let o = commands::cmd_slab(&config)?;
            let speeds: Vec<String> = o
                .solutions
                .iter()
                .map(|s| format!("a = {}: c = {}", s.grid.half_width(), s.c))
                .collect();
            format!(
                "c* = {}; {}; wrote {} files to {dir}",
                o.c_star,
                speeds.join(", "),
                o.files.len()
            )
        }
        Command::Evolve => {
            let o = commands::cmd_evolve(&config)?;
            let speeds: Vec<String> = o
                .summary
                .speeds
                .iter()
                .map(|s| match s.fitted_speed {
                    Some(v) => format!("threshold {}: {v}", s.threshold),
                    None => format!("threshold {}: no front", s.threshold),
                })
                .collect();
            format!(
                "fitted speeds {}; wrote {} files to {dir}",
                speeds.join(", "),
                o.files.len()
            )
        }
        Command::Verify => {
            let r = verify::cmd_verify(&config, cli.only.as_deref())?;
            format!("all {} checks passed; report in {dir}", r.checks.len())
        }
    })
}

/// Worker count from `TOADWAVE_THREADS`, if set.
pub fn threads_from_env() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!(
                "{THREADS_ENV} must be a positive integer (got {v:?})"
            ))),
        },
    }
}
