use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("tensor data contains a non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("row {row} has norm {norm:e}, below the degeneracy floor")]
    DegenerateRow { row: usize, norm: f64 },

    #[error("degenerate vector: {0}")]
    Degenerate(String),

    #[error("class index {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("stale cache: {0}")]
    StaleCache(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate spectrum: every eigenvalue is zero")]
    DegenerateSpectrum,

    #[error("format error in {what}: {detail}")]
    Format { what: String, detail: String },

    #[error("acceptance threshold not met: {0}")]
    Acceptance(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
