//! Command-line runner for `affectmix` experiments.
//!
//! A run is driven by one TOML file (see [`config::ExperimentConfig`]) and
//! split into stages that persist their outputs under the output directory:
//!
//! ```text
//! ingest -> cluster -> split -> search -> evaluate
//!                            \-> sweep
//!                            \-> baseline
//! evaluate | sweep | baseline -> report
//! ```

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "affectmix", version, about = "Multi-domain valence/arousal regression experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration file.
    #[arg(long, global = true, default_value = "experiment.toml")]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for folds and candidates; results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Validate both datasets and store them with rescaled labels.
    Ingest,
    /// Ward-cluster each dataset's labels.
    Cluster,
    /// Stratified fold plans.
    Split,
    /// Hyperparameter search for the evaluated cells.
    Search,
    /// Cross-validate the evaluated (k, p) cells.
    Evaluate,
    /// Cross-validate every cell of the (k, p) grid.
    Sweep,
    /// Cross-validate with randomized labels for dataset A.
    Baseline,
    /// Aggregate tables from evaluate, sweep and baseline results.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Cluster => "cluster",
            Command::Split => "split",
            Command::Search => "search",
            Command::Evaluate => "evaluate",
            Command::Sweep => "sweep",
            Command::Baseline => "baseline",
            Command::Report => "report",
        }
    }
}

/// Loads the configuration, applies command-line overrides and validates it.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    config.validate()?;
    Ok(config)
}

pub fn execute(command: Command, config: &ExperimentConfig) -> Result<artifacts::StageManifest> {
    commands::write_resolved_config(config)?;
    let manifest = match command {
        Command::Ingest => commands::cmd_ingest(config),
        Command::Cluster => commands::cmd_cluster(config),
        Command::Split => commands::cmd_split(config),
        Command::Search => commands::cmd_search(config),
        Command::Evaluate => commands::cmd_evaluate(config),
        Command::Sweep => commands::cmd_sweep(config),
        Command::Baseline => commands::cmd_baseline(config),
        Command::Report => commands::cmd_report(config),
    }?;
    log::info!(
        "{}: wrote {} file(s) under {}",
        command.name(),
        manifest.outputs.len(),
        config.out.join(command.name()).display()
    );
    Ok(manifest)
}

pub fn run(cli: &Cli) -> Result<artifacts::StageManifest> {
    if cli.jobs == Some(0) {
        return Err(CliError::ConfigInvalid {
            field: "--jobs".into(),
            reason: "must be at least 1".into(),
        });
    }
    let config = resolve_config(cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        pool = pool.num_threads(jobs);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    pool.install(|| execute(cli.command, &config))
}
