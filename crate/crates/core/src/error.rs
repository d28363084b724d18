use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("column {0} has (near) zero norm")]
    ZeroColumn(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("column {index} of the dictionary is not unit norm (|norm - 1| = {deviation:e})")]
    NotNormalized { index: usize, deviation: f64 },
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("initialization needs the ground-truth dictionary")]
    MissingGroundTruth,
    #[error("initialization needs a data batch")]
    MissingData,
    #[error("gradient came from the {found} oracle but the correlation check is for {expected}")]
    FamilyMismatch { expected: String, found: String },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
