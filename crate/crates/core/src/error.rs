//! Error type shared across the library.

/// Errors produced by parsing, validation, and modeling stages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input file. `row` is 1-based and counts the header line.
    #[error("{path}:{row}: {message}")]
    Parse {
        path: String,
        row: usize,
        message: String,
    },

    /// Input is well-formed but violates a semantic precondition.
    #[error("{0}")]
    Data(String),

    /// Tensor or matrix dimensions do not line up.
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    /// Invalid configuration value.
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn parse(path: impl Into<String>, row: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            row,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Error::Data(message.into())
    }

    pub fn shape(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Shape {
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
