use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("offset radius {r} exceeds kernel radius {rho}")]
    OutOfRange { r: f64, rho: f64 },

    #[error("zero-length offset between distinct vertices (duplicate point location)")]
    DegenerateOffset,

    #[error("structural error: {0}")]
    Structural(String),

    #[error("configuration error in `{context}`: {message}")]
    Config { context: String, message: String },

    #[error("state error: {0}")]
    State(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            context: context.into(),
            message: message.into(),
        }
    }

    /// True for errors the CLI reports with the configuration/usage exit code.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
