use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    /// Bad arguments or inconsistent inputs detected before work starts.
    #[error("{0}")]
    Input(String),
    /// Failure while running an otherwise valid job.
    #[error("{0}")]
    Runtime(String),
}

impl Error {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn json(path: &Path, line: usize, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.to_path_buf(),
            line,
            source,
        }
    }

    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    pub fn runtime(e: impl std::fmt::Display) -> Self {
        Error::Runtime(e.to_string())
    }

    pub fn input(e: impl std::fmt::Display) -> Self {
        Error::Input(e.to_string())
    }

    /// Process exit code: 1 for input problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Runtime(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
