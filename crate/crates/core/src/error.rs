use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors from the IHIC container format.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {found} (expected {expected})")]
    Version { expected: u16, found: u16 },
    #[error("unknown dtype code {0}")]
    Dtype(u8),
    #[error("invalid ndim {0} (must be 1, 2 or 3)")]
    Ndim(u8),
    #[error("dims {dims:?} overflow the addressable payload size")]
    DimOverflow { dims: Vec<u32> },
    #[error("truncated {field}: needed {needed} bytes, got {got}")]
    Truncated {
        field: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("trailing bytes after payload: {0}")]
    Trailing(usize),
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("expected a {expected}-d array, found {found}-d")]
    Rank { expected: usize, found: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{context}: {source}")]
    Format {
        context: String,
        #[source]
        source: FormatError,
    },
    #[error("axis mismatch: expected {expected}, found {found}")]
    AxisMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("shape mismatch in {what}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        what: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error(
        "rank-deficient operator at column {column}: rank {rank} < {required}, condition number {condition:e}"
    )]
    RankDeficient {
        column: usize,
        rank: usize,
        required: usize,
        condition: f64,
    },
    #[error("calibration stage {stage} failed: {reason}")]
    Calibration { stage: &'static str, reason: String },
    #[error("prior failed at stage {stage}: {source}")]
    Prior {
        stage: usize,
        #[source]
        source: PriorError,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Failures of a denoising prior, in particular the out-of-process bridge.
#[derive(Debug, Error)]
pub enum PriorError {
    #[error("timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("shape mismatch: sent {sent:?}, received {received:?}")]
    ShapeMismatch {
        sent: Vec<usize>,
        received: Vec<usize>,
    },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("transport: {0}")]
    Transport(#[from] std::io::Error),
    #[error("non-finite output")]
    NonFinite,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(what: impl Into<String>, expected: &[usize], found: &[usize]) -> Self {
        Error::ShapeMismatch {
            what: what.into(),
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }

    /// True for errors caused by the file system rather than by data or numerics.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
