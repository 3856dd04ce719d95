use std::path::PathBuf;

use lgfn_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LgfnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt file: {0}")]
    Corruption(String),
    #[error("ingest error in {file}: {reason}")]
    Ingest { file: PathBuf, reason: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("index out of bounds: {0}")]
    Bounds(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at step {step}: l1={l1}, fft_charbonnier={fft}, total={total}")]
    NonFiniteLoss {
        step: usize,
        l1: f64,
        fft: f64,
        total: f64,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = LgfnError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> LgfnError {
    let path = path.into();
    move |source| LgfnError::Io { path, source }
}
