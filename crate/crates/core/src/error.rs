//! Error types shared across the toolkit.

use thiserror::Error;

/// Errors produced by the geometric and numerical layers.
#[derive(Debug, Error)]
pub enum QcError {
    /// Division or inversion of a quantity whose value part is (numerically) zero.
    #[error("zero divisor: {0}")]
    ZeroDivisor(String),

    /// An argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    DomainError(String),

    /// The operation was called with unsupported parameters.
    #[error("usage error: {0}")]
    UsageError(String),

    /// A linear system defining the structure is singular or ill-conditioned.
    #[error("degenerate structure: {0}")]
    DegenerateStructure(String),

    /// A built-in model assumption failed to hold numerically.
    #[error("model assumption violated: {0}")]
    ModelAssumption(String),

    /// Evaluation too close to a pole or excluded point of a transform.
    #[error("singularity: {0}")]
    Singularity(String),

    /// A certificate fit did not reach the required residual.
    #[error("fit error: {0}")]
    FitError(String),

    /// Report serialization / file output failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Invalid run configuration (bad suite name, n out of range, ...).
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, QcError>;
