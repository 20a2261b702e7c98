use thiserror::Error;

/// Errors raised by the lattice, valuation, penalty and solver layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmotError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("time index {t} out of range 0..={horizon}")]
    TimeOutOfRange { t: usize, horizon: usize },
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("linear program infeasible (phase-one residual {residual:e})")]
    Infeasible { residual: f64 },
    #[error("linear program unbounded")]
    Unbounded,
    #[error("optimizer failed to certify: {0}")]
    CertificateFailure(String),
    #[error("problem too large: {0}")]
    TooLarge(String),
    #[error("monotonicity violated at index {index}: {detail}")]
    NotMonotone { index: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, EmotError>;
