use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record that could not be decoded. `context` names the file and,
    /// where known, the line or record index.
    #[error("{context}: {message}")]
    Parse { context: String, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The backend answered but the answer is unusable.
    #[error("backend error: {0}")]
    Backend(String),

    #[error("transport error for {url}: {message}")]
    Transport { url: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    /// True for failures that originate on the model-serving side rather
    /// than in local inputs.
    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Backend(_) | Error::Transport { .. })
    }
}
