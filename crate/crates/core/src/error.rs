use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("duplicate point: input {index} coincides with point {other}")]
    DuplicatePoint { index: usize, other: usize },

    #[error("Cholesky factorization failed at pivot {pivot}")]
    Factorization { pivot: usize },

    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    #[error("objective returned non-finite value {value} at {point:?}")]
    ObjectiveEvaluation { point: Vec<f64>, value: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error at line {line}: {message}")]
    Checkpoint { line: usize, message: String },

    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    CheckpointVersion { found: String, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
