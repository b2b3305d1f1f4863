use std::path::PathBuf;

/// Errors raised by the toolkit.
///
/// Variants are grouped by the kind of failure so front ends can map them onto
/// exit codes: argument and config problems, malformed data, and I/O.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    /// A caller supplied an argument outside an operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A configuration document or key failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// Input data is well-formed on disk but semantically unusable.
    #[error("data error: {0}")]
    Data(String),

    /// A metric is undefined for the given input (e.g. AUC with one class).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A file decoded to an unsupported or corrupt format.
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for this error: 1 usage/config, 2 data, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Config(_) => 1,
            Error::Data(_) | Error::UndefinedMetric(_) | Error::Format { .. } => 2,
            Error::Io { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
