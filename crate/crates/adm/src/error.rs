use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed ADMD data: {0}")]
    Format(String),
    #[error("inconsistent descriptor dimension: expected {expected}, got {actual}")]
    InconsistentDim { expected: usize, actual: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] adm_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 usage, 3 IO, 4 data shape, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        use adm_core::Error as E;
        match self {
            Error::Usage(_) | Error::Parse { .. } => 2,
            Error::Io { .. } | Error::Json { .. } => 3,
            Error::Format(_) | Error::InconsistentDim { .. } => 4,
            Error::Core(e) => match e {
                E::InvalidSpec(_) => 2,
                E::InsufficientClasses { .. }
                | E::InsufficientImages { .. }
                | E::TooFewClasses(_)
                | E::InconsistentDim { .. }
                | E::DimensionMismatch { .. }
                | E::KTooLarge { .. } => 4,
                _ => 1,
            },
        }
    }
}
