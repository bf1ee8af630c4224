use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("individual index {index} out of range for population of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("crossover target and donor are the same individual ({0})")]
    SameIndividual(usize),
    #[error("population is empty")]
    EmptyPopulation,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("no recorded forward pass")]
    NoRecordedPass,
    #[error("corrupt checkpoint at byte {offset}: {reason}")]
    CorruptCheckpoint { offset: u64, reason: String },
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: String, expected: u32 },
    #[error("{}: bad magic at byte {offset}: {found:02x?}", path.display())]
    BadMagic {
        path: PathBuf,
        offset: u64,
        found: Vec<u8>,
    },
    #[error("{}: truncated at byte {offset}: {reason}", path.display())]
    TruncatedFile {
        path: PathBuf,
        offset: u64,
        reason: String,
    },
    #[error("{}: count mismatch at byte {offset}: {images} images vs {labels} labels", path.display())]
    CountMismatch {
        path: PathBuf,
        offset: u64,
        images: usize,
        labels: usize,
    },
    #[error("malformed image {}: {reason}", path.display())]
    BadImage { path: PathBuf, reason: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// True for failures caused by the filesystem rather than by bad input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
