//! Configuration-driven front end: one command per experiment family, each
//! writing a run directory and one PASS/FAIL line per assertion.

use std::path::PathBuf;

use pme_selfsim::harness::HarnessError;
use pme_selfsim::norms::NormError;
use thiserror::Error;

pub mod commands;
pub mod config;

pub use commands::{execute, Command, Outcome, Overrides};
pub use config::RunConfig;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numeric(_) | CliError::Output { .. } => EXIT_NUMERIC,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::BadInput(msg) => CliError::Config(msg),
            HarnessError::Norm(e) => e.into(),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<NormError> for CliError {
    fn from(e: NormError) -> Self {
        match e {
            NormError::BadInput(msg) => CliError::Config(msg),
            other => CliError::Numeric(other.to_string()),
        }
    }
}
