use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at row {row}{}: {msg}", col.map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        row: usize,
        col: Option<usize>,
        msg: String,
    },

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("insufficient history: lag order {lag} needs more than {lag} samples, got {got}")]
    InsufficientHistory { lag: usize, got: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("model format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
