//! Experiment runner behind the `covsem` command-line tool.
//!
//! Each subcommand reads its inputs from the output directory, writes its
//! artifacts there, and leaves a resolved-config echo
//! (`<command>.config.toml`) and a manifest (`<command>.manifest.json`) with
//! input and output hashes next to them.

pub mod commands;
pub mod config;
mod output;

use std::path::{Path, PathBuf};

pub use commands::{Command, RunContext};
pub use config::ExperimentConfig;
pub use output::{sha256_file, Manifest};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("missing input {path}: run `covsem {producer}` first")]
    MissingInput { path: PathBuf, producer: &'static str },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] covsem::Error),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config { .. } => "config",
            HarnessError::MissingInput { .. } => "missing_input",
            HarnessError::Io { .. } => "io",
            HarnessError::Csv(_) | HarnessError::Json(_) => "format",
            HarnessError::Core(e) => match e {
                covsem::Error::Domain(_) => "domain",
                covsem::Error::Config(_) => "config",
                covsem::Error::Shape(_) => "shape",
                covsem::Error::State(_) => "state",
                covsem::Error::Divergence { .. } => "divergence",
                covsem::Error::Format(_) => "format",
                covsem::Error::Io(_) => "io",
            },
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" => 3,
            "missing_input" => 4,
            "io" | "format" => 5,
            "divergence" => 6,
            _ => 1,
        }
    }

    /// `{"error": {"kind": .., "message": .., ...}}`
    pub fn to_json(&self) -> serde_json::Value {
        let mut body = serde_json::json!({ "kind": self.kind(), "message": self.to_string() });
        match self {
            HarnessError::Config { path, .. } => body["path"] = path.clone().into(),
            HarnessError::MissingInput { path, producer } => {
                body["path"] = path.display().to_string().into();
                body["producer"] = (*producer).into();
            }
            HarnessError::Io { path, .. } => body["path"] = path.display().to_string().into(),
            HarnessError::Core(covsem::Error::Divergence { step, .. }) => body["step"] = (*step).into(),
            _ => {}
        }
        serde_json::json!({ "error": body })
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
