use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed or inconsistent input file content.
    #[error("parse: {0}")]
    Parse(String),

    /// Invalid analysis configuration.
    #[error("config: {0}")]
    Config(String),

    /// Dataset violates a structural requirement.
    #[error("data: {0}")]
    Data(String),

    /// Numerical estimation failure that cannot be degraded gracefully.
    #[error("estimation: {0}")]
    Estimation(String),
}
