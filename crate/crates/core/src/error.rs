use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("variable {0} is not a parameter recorded on this tape")]
    NotOnTape(usize),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error("unsupported combination: {0}")]
    Unsupported(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
