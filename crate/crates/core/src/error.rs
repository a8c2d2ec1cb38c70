use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every module of the crate.
#[derive(Debug, Error)]
pub enum KanError {
    /// A specification or configuration value is out of its admissible range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Caller-supplied data does not match what the operation expects.
    #[error("invalid input: {0}")]
    Input(String),

    /// A file or byte buffer does not follow its format.
    #[error("format error: {0}")]
    Format(String),

    /// A non-finite or exploding value appeared during training.
    #[error("numerical failure at iteration {iteration}: {detail}")]
    Numerical { iteration: usize, detail: String },

    /// The requested computation is refused (e.g. a dense Hessian that is too large).
    #[error("refused: {0}")]
    Refused(String),

    /// An assumption the caller relies on does not hold for the chosen configuration.
    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl KanError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KanError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, KanError>;
