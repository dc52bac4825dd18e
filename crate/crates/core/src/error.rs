use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported query: {0}")]
    UnsupportedQuery(String),

    #[error(
        "no convergence after {iterations} iterations (last relative change {last_change:e}, residual {residual:e})"
    )]
    NoConvergence {
        iterations: usize,
        last_change: f64,
        residual: f64,
    },

    #[error("calibration unavailable: {0}")]
    CalibrationUnavailable(String),

    #[error("enumeration budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed matrix file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid_param(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
