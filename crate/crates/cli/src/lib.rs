//! Batch front end for the `levy-parametrix` library: reads one TOML
//! experiment, runs a command and writes CSV artifacts plus a JSON manifest.

pub mod artifacts;
pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use levy_parametrix::Error;

pub use artifacts::{Check, RunManifest};
pub use config::{ExperimentConfig, Loaded};

pub const EXIT_OK: i32 = 0;
/// A verdict failed, or an unexpected error.
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_ASSUMPTION: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_DELTA_MISMATCH: i32 = 5;
pub const EXIT_ORACLE_BAND: i32 = 6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, message)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new(EXIT_OTHER, format!("{}: {e}", path.display()))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Assumption { .. } => EXIT_ASSUMPTION,
            Error::Divergence { .. } => EXIT_DIVERGENCE,
            Error::InvalidParameter(_) | Error::Precondition(_) | Error::EmptyInput(_) => EXIT_CONFIG,
            _ => EXIT_OTHER,
        };
        Self::new(code, e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "levypx", version, about = "Parametrix transition densities for stable-driven SDEs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true, default_value = "experiment.toml")]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Simulation seed; overrides `mc.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print nothing but errors.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Check the model and config assumptions.
    Validate,
    /// Sum the parametrix series on the horizon lattice.
    Density,
    /// Euler simulation, kernel density estimate and optional comparison.
    Oracle,
    /// Density, frozen-density and kernel ratios over a perturbation sequence.
    Stability,
    /// Envelope and kernel bounds, chain estimates and series consistency.
    Bounds,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Density => "density",
            Command::Oracle => "oracle",
            Command::Stability => "stability",
            Command::Bounds => "bounds",
        }
    }
}

/// Result of a finished run: its manifest, where it was written and the exit code.
#[derive(Debug, Clone)]
pub struct Finished {
    pub manifest: RunManifest,
    pub out_dir: PathBuf,
    pub code: i32,
}

/// Loads the config (with environment overrides from `vars`), runs the
/// command and writes its artifacts.
pub fn run(cli: &Cli, vars: impl IntoIterator<Item = (String, String)>) -> Result<Finished, CliError> {
    let loaded = config::load(&cli.config, vars, cli.seed)?;
    let out_dir = match (&cli.out, &loaded.config.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => loaded.resolve(o),
        (None, None) => loaded.resolve(Path::new("out")),
    };
    let (manifest, pending) = commands::execute(cli.command, &loaded)?;
    let code = match (manifest.passed(), cli.command) {
        (true, _) => EXIT_OK,
        (false, Command::Oracle) => EXIT_ORACLE_BAND,
        (false, _) => EXIT_OTHER,
    };
    pending.commit(&out_dir, &manifest)?;
    Ok(Finished { manifest, out_dir, code })
}
