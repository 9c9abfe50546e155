use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("input is not sorted: {0}")]
    Unsorted(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index out of bounds: {0}")]
    Index(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("fully masked softmax row {0}")]
    FullyMaskedRow(usize),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("checkpoint config does not match: {0}")]
    ConfigMismatch(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("unknown student id {0:?}")]
    UnknownStudent(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
