use thiserror::Error;

/// Error taxonomy shared across the crate. The CLI maps `Config` and `Usage`
/// to exit code 2 and `Numerical` to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad map, goal not a free cell, grid mismatch.
    #[error("configuration error: {0}")]
    Config(String),

    /// API misuse: stepping a terminated episode, mismatched shapes.
    #[error("usage error: {0}")]
    Usage(String),

    /// Non-finite values or a degenerate numerical state.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Malformed on-disk artifact (checkpoint, result store, config file).
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
