use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("image {0} has zero area")]
    EmptyImage(PathBuf),

    #[error("PAGE XML {path}: {message}")]
    PageXml { path: PathBuf, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("page too sparse: no patch with ink ratio >= {min_ink_ratio} after {attempts} attempts")]
    PageTooSparse { min_ink_ratio: f64, attempts: usize },

    #[error("no neighbouring patch position fits on the page")]
    NoNeighborFits,

    #[error("layer {layer}: {message}")]
    Shape { layer: String, message: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("instance too large for exhaustive search: {0} labelings")]
    TooLarge(f64),

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
