//! Batch front-end: each subcommand reads one TOML config, writes its
//! outputs plus `manifest.json` into the output directory.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{ExperimentConfig, DEFAULT_CONFIG};
use crate::error::CliError;
use crate::manifest::{Manifest, OutputDir};

#[derive(Debug, Parser)]
#[command(
    name = "hawkes",
    version,
    about = "Linear Hawkes processes through their age pyramid"
)]
pub struct Cli {
    /// Experiment config; the built-in default when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Base seed, overriding `run.seed`.
    #[arg(long, global = true, env = "HAWKES_SEED")]
    pub seed: Option<u64>,
    /// Monte Carlo paths, overriding `run.n_paths`.
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Print the resolved config as TOML and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate sample paths, intensities and age pyramids.
    Simulate,
    /// Mean and second-moment ODEs, with closed forms where known.
    Moments,
    /// Laplace transforms through the Riccati systems.
    Laplace,
    /// Monte Carlo checks of moments, transforms and martingales.
    Validate,
    /// ODE approximation of a power-law kernel.
    Powerlaw,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Moments => "moments",
            Command::Laplace => "laplace",
            Command::Validate => "validate",
            Command::Powerlaw => "powerlaw",
        }
    }
}

/// Config after applying command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        None => DEFAULT_CONFIG.to_string(),
    };
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(out) = &cli.out {
        cfg.output.dir = out.to_string_lossy().into_owned();
    }
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(paths) = cli.paths {
        cfg.run.n_paths = paths;
    }
    cfg.check()?;
    Ok(cfg)
}

/// Runs one subcommand to completion and returns its manifest.
pub fn execute(
    command: Command,
    cfg: &ExperimentConfig,
) -> Result<(Manifest, commands::Outcome), CliError> {
    let mut out = OutputDir::create(&cfg.output.dir)?;
    let mut saved = cfg.clone();
    saved.output.dir = ".".into();
    out.write("config.toml", saved.to_toml().as_bytes())?;
    let outcome = match command {
        Command::Simulate => commands::simulate(cfg, &mut out)?,
        Command::Moments => commands::moments(cfg, &mut out)?,
        Command::Laplace => commands::laplace(cfg, &mut out)?,
        Command::Validate => commands::validate(cfg, &mut out)?,
        Command::Powerlaw => commands::powerlaw(cfg, &mut out)?,
    };
    let manifest = out.finish(command.name(), cfg.run.seed)?;
    Ok((manifest, outcome))
}

pub fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = resolve_config(cli)?;
    if cli.dump_config {
        return Ok(cfg.to_toml());
    }
    let go = || -> Result<String, CliError> {
        let (_, outcome) = execute(cli.command, &cfg)?;
        match outcome.failure {
            Some(e) => {
                print!("{}", outcome.summary);
                Err(e)
            }
            None => Ok(outcome.summary),
        }
    };
    match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?
            .install(go),
        None => go(),
    }
}
