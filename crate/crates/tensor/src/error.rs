use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(TensorError::Shape(msg.into()))
}

pub(crate) fn spec_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(TensorError::InvalidSpec(msg.into()))
}
