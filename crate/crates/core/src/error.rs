use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{0}")]
    Format(#[from] FormatError),

    #[error("index {index} out of range for {len} candidates")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("critic layer `{0}` is not piecewise linear")]
    NotPiecewiseLinear(String),

    #[error("config: {0}")]
    Config(String),

    #[error("manifest {path}:{line}: {msg}")]
    Manifest { path: PathBuf, line: usize, msg: String },

    #[error("image {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("training diverged at step {step}: {msg}")]
    Diverged { step: usize, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Failure kinds of the `.tnsr` exchange format reader.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic {0:?}, expected \"TNSR\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("unsupported ndim {0} (expected 1..=4)")]
    BadRank(u8),
    #[error("reserved header byte is {0}, expected 0")]
    BadReserved(u8),
    #[error("truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{extra} trailing bytes after payload")]
    TrailingBytes { extra: usize },
    #[error("payload element {0} is NaN")]
    NaN(usize),
    #[error("payload element {0} is infinite")]
    Infinite(usize),
    #[error("dtype mismatch: file holds {found}, caller asked for {expected}")]
    DtypeMismatch { expected: &'static str, found: &'static str },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
