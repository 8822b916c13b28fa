use thiserror::Error;

/// Errors raised by the simulator. Variants map onto the contract
/// violations each operation documents.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QsqError {
    #[error("dimension {found} is outside the supported range 1..={max}")]
    DimensionOutOfRange { found: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("coordinate {coordinate} out of range for n = {n}")]
    CoordinateOutOfRange { coordinate: usize, n: usize },

    #[error("invalid truth table: {0}")]
    InvalidTable(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("observable norm {0} exceeds 1")]
    NormViolation(f64),

    #[error("observable is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("tolerance must be positive and finite, got {0}")]
    InvalidTolerance(f64),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("illegal query: {0}")]
    IllegalQuery(String),

    #[error("oracle answers violate the query contract: {0}")]
    ContractViolation(String),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, QsqError>;

impl From<serde_json::Error> for QsqError {
    fn from(e: serde_json::Error) -> Self {
        QsqError::Format(e.to_string())
    }
}

impl From<csv::Error> for QsqError {
    fn from(e: csv::Error) -> Self {
        QsqError::Format(e.to_string())
    }
}
