use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FastError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FastError {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("ingestion error at row {row}{}: {msg}", .col.map(|c| format!(", column {c}")).unwrap_or_default())]
    Ingestion {
        row: usize,
        col: Option<usize>,
        msg: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FastError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FastError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data/config/checkpoint, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            FastError::Usage(_) => 1,
            FastError::Numeric(_) | FastError::UndefinedMetric(_) => 3,
            _ => 2,
        }
    }
}
