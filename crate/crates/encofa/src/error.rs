use std::path::PathBuf;
use thiserror::Error;

/// Error type shared across the crate.
///
/// Variants map to process exit codes: config errors exit 2, data errors
/// exit 3, anything that fails at run time exits 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("runtime error: {0}")]
    Runtime(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Runtime(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
