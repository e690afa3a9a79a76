//! Experiment runner behind the `swd` binary: INI-style configs, IDX
//! ingestion, model-bundle files, CSV/PGM reports, and orchestration
//! of the source-only / L1 / SWD conditions.

pub mod bundle_io;
pub mod config;
pub mod experiment;
pub mod idx;
pub mod report;

use std::fmt;

/// Top-level failure classes, mapped to process exit codes
/// (0 success, 1 config error, 2 runtime error).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn runtime(err: impl fmt::Display) -> Self {
        CliError::Runtime(err.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Runtime(msg) => write!(f, "runtime error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Runtime(err.to_string())
    }
}

impl From<swd_core::Error> for CliError {
    fn from(err: swd_core::Error) -> Self {
        CliError::Runtime(err.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
