use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input fell outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    /// Operation invoked in the wrong order (e.g. backward before forward).
    #[error("state error: {0}")]
    State(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    /// Non-finite value during optimisation; `group` names the parameter group or loss term.
    #[error("training error in `{group}`: {message}")]
    Training { group: String, message: String },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn training(group: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Training {
            group: group.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 2,
            Error::Training { .. } => 4,
            Error::Domain(_) | Error::State(_) => 4,
            _ => 3,
        }
    }
}
