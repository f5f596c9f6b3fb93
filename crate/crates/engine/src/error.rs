//! Crate-wide error type.
//!
//! Variants are grouped by failure domain so downstream callers (notably the
//! CLI, which maps them to process exit codes) can classify errors without
//! string matching.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, EngineError>;

/// All failure modes surfaced by the engine.
#[derive(Debug, Error)]
pub enum EngineError {
    /// A caller-supplied parameter, contract, grid, or configuration value
    /// is malformed (wrong sign, wrong ordering, missing field, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A data file could not be read or failed row-level validation.
    /// Messages name the offending file and, where applicable, the row.
    #[error("data error: {0}")]
    Data(String),

    /// A numerical guarantee was violated at run time (quadrature mass
    /// deficit, singular discount factor, non-finite value, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A validation run (oracle comparison, invariant check) failed.
    #[error("validation failure: {0}")]
    Validation(String),

    /// An underlying I/O operation failed.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl EngineError {
    /// Shorthand for [`EngineError::InvalidInput`] with a formatted message.
    pub fn invalid(msg: impl Into<String>) -> Self {
        EngineError::InvalidInput(msg.into())
    }

    /// Shorthand for [`EngineError::Data`] with a formatted message.
    pub fn data(msg: impl Into<String>) -> Self {
        EngineError::Data(msg.into())
    }

    /// Shorthand for [`EngineError::Numerical`] with a formatted message.
    pub fn numerical(msg: impl Into<String>) -> Self {
        EngineError::Numerical(msg.into())
    }

    /// Shorthand for [`EngineError::Validation`] with a formatted message.
    pub fn validation(msg: impl Into<String>) -> Self {
        EngineError::Validation(msg.into())
    }
}
