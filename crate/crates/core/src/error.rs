use thiserror::Error;

/// Errors raised across the quantizer, training and analysis layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("temperature must be positive and finite, got {0}")]
    NonPositiveTemperature(f64),

    #[error("input contains NaN at position {0}")]
    NanInput(usize),

    #[error("saved forward state does not match this call ({0})")]
    StaleSavedState(String),

    #[error("bitstream length error: expected {expected} bits, got {actual}")]
    BitstreamLength { expected: usize, actual: usize },

    #[error("instance too large for exhaustive enumeration: {0} candidates")]
    InstanceTooLarge(f64),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("parity failure between implementations: {0}")]
    ParityFailure(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
