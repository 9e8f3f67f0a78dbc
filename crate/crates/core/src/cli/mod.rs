//! Command-line driver: `fit`, `simulate` and `diagnose`.

pub mod config;
mod diagnose;
mod run;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::{parse_assignment, parse_text, resolve, ConfigError, RunConfig};
pub use diagnose::{diagnose_run, read_samples};
pub use run::{fit, RunSummary};

use crate::data::DataError;
use crate::models::{simulate_dataset, ModelError, ModelId};
use crate::samplers::SamplerError;

/// Fraction of failed fits above which a run is reported as failed.
pub const FAILURE_STORM_FRACTION: f64 = 0.5;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Sampler(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Sampler(_) => 4,
            CliError::Io(_) => 5,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Sampler(_) => "sampler",
            CliError::Io(_) => "io",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Sampler(m) | CliError::Io(m) => m,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind(), self.message())
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::UnknownModel(_) | ModelError::Proposal(_) => CliError::Config(e.to_string()),
            ModelError::Data(d) => d.into(),
            ModelError::Invalid(m) => CliError::Data(m),
        }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::InvalidConfig(_) | SamplerError::InvalidProposal(_) => CliError::Config(e.to_string()),
            other => CliError::Sampler(other.to_string()),
        }
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    kind: &'a str,
    exit_code: i32,
    message: &'a str,
}

/// Writes `error.json` into `dir`, creating it if needed. Best effort.
pub fn write_error(dir: &Path, err: &CliError) {
    let rec = ErrorRecord { kind: err.kind(), exit_code: err.exit_code(), message: err.message() };
    if std::fs::create_dir_all(dir).is_ok() {
        if let Ok(text) = serde_json::to_string_pretty(&rec) {
            let _ = std::fs::write(dir.join("error.json"), text + "\n");
        }
    }
}

/// Loads a config file (if any), applies overrides in order and resolves it.
/// On failure also returns the output directory when one can be read.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<RunConfig, (CliError, Option<PathBuf>)> {
    let mut raw = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| (CliError::Io(format!("{}: {e}", p.display())), None))?;
            parse_text(&text).map_err(|e| (e.into(), None))?
        }
        None => Default::default(),
    };
    for (k, v) in overrides {
        raw.insert(k.clone(), v.clone());
    }
    resolve(&raw).map_err(|e| (e.into(), raw.get("out").map(PathBuf::from)))
}

/// Writes a synthetic dataset for `model`; `n = None` uses the default size.
pub fn simulate(model: ModelId, seed: u64, n: Option<usize>, out: &Path) -> Result<(), CliError> {
    let n = n.unwrap_or_else(|| crate::models::default_n(model));
    let data = simulate_dataset(model, seed, n)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    data.write_csv_path(out)?;
    Ok(())
}

/// Formats a float for output files: 17 significant digits.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
