use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter left its valid domain (non-unit quaternion, non-positive scale, ...).
    #[error("parameter domain error: {0}")]
    Domain(String),

    /// A Gaussian carried a NaN or infinite parameter into the renderer.
    #[error("non-finite parameter on gaussian {id}: {what}")]
    NonFinite { id: usize, what: &'static str },

    /// A loss component became NaN or infinite during training.
    #[error("non-finite loss component `{part}` at iteration {iteration}")]
    NonFiniteLoss { part: &'static str, iteration: usize },

    /// The caller violated an operation's contract (shape mismatch, empty input, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// Sphere initialization of the SDF diverged.
    #[error("initialization error: {0}")]
    Init(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
