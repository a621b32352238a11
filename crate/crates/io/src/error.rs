use std::path::PathBuf;

use bald_core::BaldError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },
    #[error(transparent)]
    Core(#[from] BaldError),
}

impl IoError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Self::Format { what, msg: msg.into() }
    }
}

pub type Result<T, E = IoError> = std::result::Result<T, E>;
