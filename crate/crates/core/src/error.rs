use std::path::{Path, PathBuf};

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad flags, missing config, unusable settings.
    Usage,
    /// Input files that cannot be read or parsed.
    Data,
    /// Failures while running the pipeline.
    Runtime,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{what} id {index} out of range (size {size})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("non-finite loss on sample `{sample}` (epoch {epoch})")]
    NonFiniteLoss { sample: String, epoch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("transport error after {attempts} attempt(s): {msg}")]
    Transport { attempts: u32, msg: String },

    #[error("malformed prompt: {0}")]
    Prompt(String),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn parse(path: impl AsRef<Path>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.as_ref().to_path_buf(),
            line,
            msg: msg.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::Parse { .. }
            | Error::Io { .. }
            | Error::Data(_)
            | Error::OutOfRange { .. }
            | Error::Checkpoint(_) => ErrorKind::Data,
            Error::Shape(_)
            | Error::NonFiniteLoss { .. }
            | Error::Transport { .. }
            | Error::Prompt(_) => ErrorKind::Runtime,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
