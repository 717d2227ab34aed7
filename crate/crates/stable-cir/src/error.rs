//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument left the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Adaptive quadrature could not reach the requested tolerance.
    #[error("quadrature failed: {0}")]
    Quadrature(String),

    /// A simulated state became NaN or infinite.
    #[error("non-finite state: {0}")]
    NonFinite(String),

    /// An observation that must be strictly positive was not.
    #[error("positivity violation: {0}")]
    Positivity(String),

    /// A matrix required to be invertible was numerically singular.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// Invalid configuration or input file.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The root finder stopped without reaching the residual tolerance.
    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
