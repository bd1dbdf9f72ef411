//! Crate-wide error type.

/// Errors surfaced by configuration, data loading, and run execution.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or inconsistent experiment setup.
    #[error("config error: {0}")]
    Config(String),
    /// Malformed bytes while decoding a dataset file.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    /// A training run aborted (for example on a non-finite update).
    #[error("run failure: {0}")]
    Run(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Config(e.to_string())
    }
}
