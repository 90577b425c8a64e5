use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a structural precondition (shapes, definiteness, ranges).
    #[error("invalid input: {0}")]
    Validation(String),

    /// Configuration file is missing, malformed, or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A numerical routine failed to converge or produced garbage.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The request is well-formed but outside what this build implements.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
    pub fn unsupported(msg: impl Into<String>) -> Self {
        Error::Unsupported(msg.into())
    }
}
