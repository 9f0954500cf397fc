use thiserror::Error;

/// Errors raised across estimation, experiment and backtest code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A matrix that must be symmetric positive definite failed to factorize.
    #[error("matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: &'static str },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("row {row} has no observed entries")]
    EmptyRow { row: usize },

    #[error("insufficient data: need at least {required} rows, got {actual}")]
    InsufficientData { required: usize, actual: usize },

    #[error("degenerate ground truth: {0}")]
    DegenerateTruth(&'static str),

    #[error("non-finite log-likelihood at iteration {iteration}")]
    NonFiniteLikelihood { iteration: usize },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("csv error at line {line}, column {column}: {message}")]
    Csv {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("duplicate date {0}")]
    DuplicateDate(String),

    #[error("dates not increasing at line {line}: {date}")]
    NonMonotoneDate { line: usize, date: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::NotSymmetric { .. } => "not_symmetric",
            Error::EmptyRow { .. } => "empty_row",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::DegenerateTruth(_) => "degenerate_truth",
            Error::NonFiniteLikelihood { .. } => "non_finite_likelihood",
            Error::Unsupported(_) => "unsupported",
            Error::Csv { .. } => "csv",
            Error::DuplicateDate(_) => "duplicate_date",
            Error::NonMonotoneDate { .. } => "non_monotone_date",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
