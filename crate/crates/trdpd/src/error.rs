use std::fmt;
use std::io;

/// Errors surfaced by the tool layer: IO, file-format violations, and
/// anything bubbling up from the core algorithms.
#[derive(Debug)]
pub enum Error {
    Io(io::Error),
    Core(trdpd_core::Error),
    Format(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Core(e) => write!(f, "{e}"),
            Error::Format(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Core(e) => Some(e),
            Error::Format(_) => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<trdpd_core::Error> for Error {
    fn from(e: trdpd_core::Error) -> Self {
        Error::Core(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}
