use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("channel mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("weight file format error: {0}")]
    WeightFormat(String),
    #[error("weight file config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("image format error in {path:?}: {reason}")]
    ImageFormat { path: PathBuf, reason: String },
    #[error("non-finite loss at step {step}")]
    NanLoss { step: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
