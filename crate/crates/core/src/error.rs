use thiserror::Error;

/// Errors raised by the distribution, model and experiment layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("not a probability vector: {0}")]
    InvalidProbabilities(String),

    #[error("infinite divergence: reference assigns zero probability to cell ({row}, {col})")]
    InfiniteDivergence { row: usize, col: usize },

    #[error("infinite loss: model assigns zero probability to outcome {effect} given {cause}")]
    InfiniteLoss { cause: usize, effect: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("non-finite value during {0}")]
    NonFinite(String),

    #[error("divergence: {0}")]
    Diverged(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("degenerate column {0}: zero variance")]
    DegenerateColumn(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
