use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("non-finite coordinate at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("point buffer of length {len} is not a multiple of dimension {dim}")]
    RaggedPoints { len: usize, dim: usize },
    #[error("label {label} at row {row} is not 0 or 1")]
    InvalidLabel { row: usize, label: u8 },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("worker {worker} is adversarial (a + b = {sum:.6} <= 1)")]
    AdversarialWorker { worker: usize, sum: f64 },
    #[error("no workers left after dropping adversarial workers")]
    NoWorkersRetained,
    #[error("no expert worker designated")]
    NoExpert,
    #[error("more than one expert worker designated")]
    MultipleExperts,
    #[error("zero denominator: {0}")]
    ZeroDenominator(String),
    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
