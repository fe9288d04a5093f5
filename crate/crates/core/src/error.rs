use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: &'static str },

    #[error("matrix is asymmetric beyond tolerance (relative asymmetry {asymmetry:.3e})")]
    AsymmetricInput { asymmetry: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("dataset contains no vectors")]
    EmptyDataset,

    #[error("empty vector set on one side of a trial")]
    EmptySet,

    #[error("zero vector cannot be normalized")]
    ZeroVector,

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: byte offset {offset}: {message}", path.display())]
    BinaryParse {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("unknown utterance id `{id}`")]
    UnknownUtteranceId { id: String },

    #[error("trial line {line}: unknown id `{id}`")]
    UnknownId { id: String, line: usize },

    #[error("M-step accumulator is singular")]
    SingularAccumulator,

    #[error("rank deficient: requested {requested}, at most {available} available")]
    RankDeficient { requested: usize, available: usize },

    #[error("score set has no {0} trials")]
    MissingLabels(&'static str),

    #[error("invalid operating point: {0}")]
    InvalidOperatingPoint(String),

    #[error("dense oracle size guard exceeded: {size} > {limit}")]
    SizeGuardExceeded { size: usize, limit: usize },

    #[error("not enough speakers: {0}")]
    InsufficientSpeakers(String),

    #[error("scoring path unsupported: {0}")]
    PathUnsupported(String),

    #[error("invalid model file: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
