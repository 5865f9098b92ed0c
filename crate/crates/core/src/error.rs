use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: {msg}")]
    FileFormat { path: PathBuf, msg: String },

    #[error("scene {dir}: {msg}")]
    Scene { dir: PathBuf, msg: String },

    #[error("image decode ({path}): {msg}")]
    ImageDecode { path: PathBuf, msg: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sweep of {len} shifts exceeds the cap of {cap}")]
    SweepTooLong { len: usize, cap: usize },

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("network: {0}")]
    Net(String),

    #[error("training: {0}")]
    Train(String),

    #[error("metric evaluated over an empty mask")]
    EmptyMask,

    #[error("invalid scene spec: {0}")]
    SceneSpec(String),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::FileFormat { path: path.into(), msg: msg.into() }
    }

    pub(crate) fn scene(dir: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Scene { dir: dir.into(), msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
