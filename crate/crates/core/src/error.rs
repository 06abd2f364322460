use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
#[non_exhaustive]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix dimension {dim} exceeds the supported maximum of {max}")]
    TooLarge { dim: usize, max: usize },

    #[error("eigendecomposition did not converge after {sweeps} Jacobi sweeps (off-diagonal norm {off_diagonal:e})")]
    NoConvergence { sweeps: usize, off_diagonal: f64 },

    #[error("matrix is not invertible (smallest eigenvalue {min_eigenvalue:e})")]
    NotInvertible { min_eigenvalue: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error(
        "line search failed at iteration {iteration} after {reductions} step reductions \
         (objective {objective}, last step {step:e})"
    )]
    LineSearch { iteration: usize, reductions: usize, objective: f64, step: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Failures of the numerical machinery, as opposed to bad inputs or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. } | Error::NotInvertible { .. } | Error::LineSearch { .. } | Error::NonFinite(_)
        )
    }

    /// Failures caused by the environment (files, streams).
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Csv(e) => e.is_io_error(),
            Error::Json(e) => e.is_io(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
