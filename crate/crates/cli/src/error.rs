//! CLI error classes and their process exit codes.

use std::fmt;
use std::path::Path;

use sglmm_core::SglmmError;

/// Errors surfaced to the user, classified by exit code: configuration
/// problems exit 2, data/file problems exit 3, numerical failures exit 4.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<SglmmError> for CliError {
    fn from(e: SglmmError) -> Self {
        match e {
            SglmmError::InvalidArgument(m) => CliError::Config(m),
            SglmmError::InvalidData(m) => CliError::Data(m),
            SglmmError::Numerical(m) => CliError::Numerical(m),
        }
    }
}

/// Wrap a filesystem error with the path it concerns (exit code 3).
pub fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

pub type CliResult<T> = Result<T, CliError>;
