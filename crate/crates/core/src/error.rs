//! Error type shared across the library.

use thiserror::Error;

/// Errors produced by model construction, simulation, and fitting.
#[derive(Debug, Error)]
pub enum SglmmError {
    /// An argument lies outside its valid domain (negative distance,
    /// non-positive kernel parameter, dimension mismatch, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input data failed validation (family support, schema, shapes).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A numerical operation failed (factorization breakdown, non-finite
    /// objective, divergent sampler).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, SglmmError>;
