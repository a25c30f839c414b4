use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing embedding for `{0}`")]
    MissingEmbedding(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("empty graph: {0}")]
    EmptyGraph(String),

    #[error("graph corruption error: {0}")]
    Corruption(String),

    #[error("confident pool error: {0}")]
    Pool(String),

    #[error("batch size error: {0}")]
    BatchSize(String),

    #[error("missing modality: {0}")]
    MissingModality(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.to_string(),
        }
    }
}
