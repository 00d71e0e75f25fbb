use std::path::PathBuf;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed file at byte offset {offset}: {msg}")]
    Format {
        path: PathBuf,
        offset: u64,
        msg: String,
    },
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Core(#[from] ofa_core::Error),
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, offset: u64, msg: impl Into<String>) -> Self {
        LabError::Format {
            path: path.into(),
            offset,
            msg: msg.into(),
        }
    }

    /// Process exit status: 1 usage, 2 data or file format, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        use ofa_core::Error as E;
        match self {
            LabError::Usage(_) => 1,
            LabError::Io { .. } | LabError::Format { .. } | LabError::Json { .. } => 2,
            LabError::Core(E::Numeric(_) | E::NonFiniteLoss { .. }) => 3,
            LabError::Core(E::Config(_)) => 1,
            LabError::Core(_) => 2,
        }
    }
}
