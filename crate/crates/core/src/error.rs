use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared by the whole pipeline.
///
/// Variants are grouped so the CLI can map them onto exit codes:
/// data/schema problems exit 3, numeric failures exit 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid phrase list: {0}")]
    InvalidPhraseList(String),

    #[error("invalid category {value:?} for attribute {attribute}")]
    InvalidCategory { attribute: String, value: String },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    ShapeMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// CLI exit code for this error: 3 for data/schema, 4 for numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) | Error::Diverged { .. } => 4,
            _ => 3,
        }
    }
}
