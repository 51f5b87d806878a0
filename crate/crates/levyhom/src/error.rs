use thiserror::Error;

/// Crate-wide error type. Numerical invariant violations (partition of unity,
/// Hermitian drift, diverging iterations) are reported through here rather
/// than panicking, so callers can surface them in reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid dimension must be 1, 2 or 3, got {0}")]
    BadDimension(usize),

    #[error("grid size must be a power of two >= 8, got {0}")]
    BadGridSize(usize),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("partition of unity violated: {0}")]
    Partition(String),

    #[error("hermitian symmetry drift {drift:.3e} exceeds tolerance {tol:.1e}")]
    HermitianDrift { drift: f64, tol: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("mode-0 coefficient must vanish, got modulus {0:.3e}")]
    NonzeroMean(f64),

    #[error("inadmissible parameters: {0}")]
    Inadmissible(String),

    #[error("iteration diverged: {0}")]
    Diverged(String),

    #[error(
        "resolvent iteration not contracting at lambda = {lambda:.6e} \
         (observed rate {rate:.3}); retry with lambda >= {lambda_min:.6e}"
    )]
    NotContracting {
        lambda: f64,
        rate: f64,
        lambda_min: f64,
    },

    #[error("spherical measure: {0}")]
    Measure(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
