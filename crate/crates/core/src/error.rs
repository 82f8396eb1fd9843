use thiserror::Error;

/// Errors raised by the aggregation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate prior: every candidate has zero prior mass")]
    DegeneratePrior,

    #[error(
        "exact enumeration over 2^{dim} patterns exceeds the limit of 2^{limit}; use MH mode instead"
    )]
    ExactGuard { dim: usize, limit: usize },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
