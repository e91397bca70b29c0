use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure at step {step}: {reason}")]
    NumericalFailure { step: usize, reason: String },

    #[error("calibration failed: {0}")]
    CalibrationFailure(String),

    #[error("optimization failed at {point:?}: {reason}")]
    OptimizationFailure { point: Vec<f64>, reason: String },

    #[error("sequence {sequence} (length {length}): {source}")]
    Sequence {
        length: usize,
        sequence: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
