use thiserror::Error;

/// Errors produced while building, querying or persisting flat indexes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("jacobi svd did not converge within {0} sweeps")]
    NoConvergence(usize),

    #[error("empty input")]
    EmptyInput,

    /// The hash tables produced no candidate for the query.
    #[error("no candidate in any probed bucket")]
    NearMiss,

    #[error("enumeration budget exceeded: {needed:.3e} items > {budget:.3e}")]
    BudgetExceeded { needed: f64, budget: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("unsupported format: {0}")]
    Version(String),

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
