//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    /// Interior-point solver ran out of Newton steps. Carries the last
    /// iterate so callers can inspect how close it got.
    #[error(
        "laplacian QP did not converge: duality gap {gap:.3e}, \
         feasibility {feasibility:.3e} after {iterations} Newton steps"
    )]
    QpNoConvergence {
        gap: f64,
        feasibility: f64,
        iterations: usize,
        last_weights: Vec<f64>,
    },

    /// Inner-solver failure inside the alternating driver; carries the
    /// objective values recorded before the failure.
    #[error("joint estimation failed at outer iteration {outer}: {source}")]
    JointFailure {
        outer: usize,
        partial_trace: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("Poisson rate {rate:.3e} exceeds 1e12; reduce the initial counts Z0")]
    RateOverflow { rate: f64 },

    #[error("unknown territory '{name}'; available: {available}")]
    UnknownTerritory { name: String, available: String },

    #[error("CSV parse error at line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error("date range error: {0}")]
    DateRange(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
