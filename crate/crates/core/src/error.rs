use thiserror::Error;

/// Errors raised by the fitting, kernel and data routines.
#[derive(Debug, Error)]
pub enum FairError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("linear system could not be solved: {0}")]
    Singular(String),

    #[error("matrix is not positive definite after jitter ladder {ladder:?}")]
    NotPositiveDefinite { ladder: Vec<f64> },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("hyperparameter optimization failed: {0}")]
    Optimization(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FairError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(FairError::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
