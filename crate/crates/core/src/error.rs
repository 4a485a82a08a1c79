use std::path::PathBuf;

use thiserror::Error;

/// Coarse category of an [`Error`], used by the command line front end to pick
/// an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Schema,
    Io,
    Domain,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read `{path}`: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write `{path}`: {source}")]
    Unwritable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported TIFF `{path}`: {reason}")]
    UnsupportedTiff { path: PathBuf, reason: String },
    #[error("malformed TIFF `{path}`: {reason}")]
    MalformedTiff { path: PathBuf, reason: String },
    #[error("header of `{path}` does not match its payload: {reason}")]
    HeaderMismatch { path: PathBuf, reason: String },
    #[error("invalid RVOL header `{path}`: {reason}")]
    InvalidHeader { path: PathBuf, reason: String },
    #[error("value {value} does not fit into {dtype}")]
    ValueOverflow { value: f64, dtype: &'static str },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("window out of bounds: {0}")]
    OutOfBounds(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("label {0} is not present in the volume")]
    MissingLabel(u32),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config { .. } => ErrorKind::Schema,
            Error::Unreadable { .. }
            | Error::Unwritable { .. }
            | Error::UnsupportedTiff { .. }
            | Error::MalformedTiff { .. }
            | Error::HeaderMismatch { .. }
            | Error::InvalidHeader { .. } => ErrorKind::Io,
            _ => ErrorKind::Domain,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
