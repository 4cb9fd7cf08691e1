use std::io;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke a documented precondition (wrong lengths, sizes, counts).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("model generation failed: {0}")]
    ModelGeneration(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Malformed or truncated file; `offset` is the byte position where
    /// reading stopped making sense.
    #[error("{path}: format error at byte {offset}: {message}")]
    Format {
        path: String,
        offset: u64,
        message: String,
    },

    #[error("training diverged: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(path: &str, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_string(),
            offset,
            message: message.into(),
        }
    }
}
