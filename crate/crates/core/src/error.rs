use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate record id {0:?}")]
    DuplicateId(String),

    #[error("invalid record {id:?}: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("record {id:?} has {found} features, expected {expected}")]
    FeatureDim {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("corpus has no records")]
    EmptyCorpus,

    #[error("class {0:?} has no records")]
    EmptyClass(String),

    #[error("unknown class {0:?}")]
    UnknownClass(String),

    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),

    #[error("unknown record id {0:?}")]
    UnknownId(String),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("edit failed for {id:?}: {reason}")]
    Edit { id: String, reason: String },

    #[error("editor backend: {0}")]
    Backend(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
