use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, widths, or hyper-parameters that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    /// NaN or infinity produced by a forward/backward pass or a loss.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// API called out of order (e.g. backward without a train-mode forward).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged { epoch: usize, step: usize, detail: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch for {0}")]
    Checksum(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
