//! Configuration-driven experiments for the qutrit leakage simulator.
//!
//! Every subcommand reads a JSON config, runs its sweep and writes plot-ready
//! CSV tables next to a JSON manifest. A manifest is itself a valid config:
//! feeding it back reproduces the tables byte for byte.

mod config;
mod experiments;
mod output;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    AlphaSweep, DetuneSweep, DetuningMode, Drag2Sweep, ExperimentConfig, HeatingSweep, LengthSweep, ReadoutNoise,
    RbSweep, TomographySweep, TuneSweep,
};
pub use output::{Failure, Manifest, Table};

pub const TOOL: &str = "qleak";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Rb,
    LeakageVsAlpha,
    LeakageVsLength,
    Heating,
    DetuneSweep,
    Tomography,
    Drag2Scan,
    DecayRates,
    Calibrate,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::Rb,
        Experiment::LeakageVsAlpha,
        Experiment::LeakageVsLength,
        Experiment::Heating,
        Experiment::DetuneSweep,
        Experiment::Tomography,
        Experiment::Drag2Scan,
        Experiment::DecayRates,
        Experiment::Calibrate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Rb => "rb",
            Experiment::LeakageVsAlpha => "leakage-vs-alpha",
            Experiment::LeakageVsLength => "leakage-vs-length",
            Experiment::Heating => "heating",
            Experiment::DetuneSweep => "detune-sweep",
            Experiment::Tomography => "tomography",
            Experiment::Drag2Scan => "drag2-scan",
            Experiment::DecayRates => "decay-rates",
            Experiment::Calibrate => "calibrate",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config {file}: {path}: {message}")]
    Config { file: String, path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Simulation(#[from] qleak::Error),
}

impl CliError {
    /// 2 for configuration problems, 1 for anything that went wrong later.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            _ => 1,
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            file: String::new(),
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn in_file(self, file: &Path) -> Self {
        match self {
            CliError::Config { path, message, .. } => CliError::Config {
                file: file.display().to_string(),
                path,
                message,
            },
            other => other,
        }
    }
}

/// Command-line overrides of the config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: PathBuf,
    pub outputs: Vec<PathBuf>,
    pub failures: Vec<Failure>,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            1
        }
    }
}

/// Loads the config at `path`, applies the overrides, runs the experiment
/// and writes its outputs.
pub fn run(experiment: Experiment, path: &Path, overrides: &Overrides) -> Result<RunSummary, CliError> {
    let value = config::load(path).map_err(|e| e.in_file(path))?;
    let base = path.parent().unwrap_or(Path::new(""));
    experiments::dispatch(experiment, value, base, overrides).map_err(|e| e.in_file(path))
}
