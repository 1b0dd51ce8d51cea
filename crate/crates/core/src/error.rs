//! Crate-wide error taxonomy.

use std::path::PathBuf;

/// Errors produced by any fallible operation in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation was invoked on an object in a state that does not
    /// support it (e.g. stepping a finished episode).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A file or byte stream does not conform to the expected layout.
    #[error("format error ({what}): {message}")]
    Format { what: String, message: String },

    /// An underlying I/O failure, tagged with the path involved. The
    /// display omits the source; error chains print it themselves.
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Training produced a non-finite or absurdly large loss.
    #[error("training diverged at step {step}: {message}")]
    Diverged { step: u64, message: String },
}

impl Error {
    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn invalid_state(msg: impl Into<String>) -> Self {
        Error::InvalidState(msg.into())
    }

    pub fn format(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
