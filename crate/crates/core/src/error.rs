use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = EwsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EwsError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("training labels contain a single class ({0})")]
    SingleClass(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl EwsError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EwsError::Io {
            path: path.into(),
            source,
        }
    }
}
