use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this tape; build a fresh tape for another pass")]
    BackwardConsumed,

    #[error("variable belongs to tape {found}, not tape {expected}")]
    DetachedVar { expected: u64, found: u64 },

    #[error("caption id {0} has no teacher embedding")]
    MissingCaption(u64),

    #[error("{what}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("{what}: unsupported version {found}, expected {expected}")]
    BadVersion {
        what: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("{what}: truncated at byte {offset}: {msg}")]
    Truncated {
        what: &'static str,
        offset: usize,
        msg: String,
    },

    #[error("{what}: corrupted: {msg}")]
    Corrupted { what: &'static str, msg: String },

    #[error("duplicate caption id {0}")]
    DuplicateCaption(u64),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("sweep cell {cell} failed: {source}")]
    SweepCell {
        cell: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
