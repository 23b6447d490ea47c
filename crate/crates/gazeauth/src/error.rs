//! Crate-wide error type.
//!
//! Variants map onto the CLI exit codes: configuration problems exit 1,
//! data problems exit 2, numerical failures exit 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad hyperparameters, inconsistent specs).
    #[error("config error: {0}")]
    Config(String),

    /// Invalid or missing data (malformed recordings, shape mismatches).
    #[error("data error: {0}")]
    Data(String),

    /// I/O failure while reading or writing dataset/artifact files.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Numerical failure (divergence, degenerate statistics).
    #[error("numerical error: {0}")]
    Numerical(String),
}

impl Error {
    /// Exit code for the CLI: 1 config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_) | Error::Io { .. } => 2,
            Error::Numerical(_) => 3,
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
