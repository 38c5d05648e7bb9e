use std::path::PathBuf;

use crossdepict_core::Error as CoreError;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    /// Bad flags, unreadable or invalid configuration, unmet preconditions.
    pub const CONFIG: i32 = 2;
    /// Unreadable or malformed data, unwritable output.
    pub const DATA: i32 = 3;
    /// A training or evaluation run failed.
    pub const RUN: i32 = 4;
    /// Frozen-head or held-out isolation audit failed.
    pub const AUDIT: i32 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> CliError {
        CliError::Data {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Data { .. } | CliError::Io { .. } => exit::DATA,
            CliError::Core(e) => match e.root() {
                CoreError::Config(_) => exit::CONFIG,
                CoreError::Audit(_) => exit::AUDIT,
                CoreError::Data(_) | CoreError::DataLength { .. } | CoreError::LabelOutOfRange { .. } => exit::DATA,
                _ => exit::RUN,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
