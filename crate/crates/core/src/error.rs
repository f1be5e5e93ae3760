use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("{0} file has bad magic bytes")]
    BadMagic(&'static str),

    #[error("unsupported file version {0}")]
    UnsupportedVersion(u16),

    #[error("spec hash mismatch: file {found:016x}, expected {expected:016x}")]
    SpecHashMismatch { expected: u64, found: u64 },

    #[error("file truncated while reading {0}")]
    Truncated(&'static str),

    #[error("weight file does not match model: {0}")]
    WeightLayout(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("duplicate video_id {0:?} in manifest")]
    DuplicateVideo(String),

    #[error("unknown subset tag {tag:?}; valid tags: {valid}")]
    UnknownTag { tag: String, valid: String },

    #[error("frame error in {path}: {reason}")]
    Frame { path: PathBuf, reason: String },

    #[error("stream error: {0}")]
    Stream(String),

    #[error("io error on {path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, cause: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
