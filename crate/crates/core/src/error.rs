use thiserror::Error;

/// Errors produced by the monitoring engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: expected vector of length {expected}, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: non-finite value in vector")]
    NonFiniteValue { line: usize },

    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },

    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("Mahalanobis baseline needs at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("covariance is singular even after regularization")]
    SingularCovariance,

    #[error("item {id:?}: dimension {found} does not match baseline dimension {expected}")]
    VectorDimension {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("baseline has no covariance; refit with the Mahalanobis metric")]
    MissingCovariance,

    #[error("zero-norm vector ({0})")]
    ZeroVector(String),

    #[error("image has no pixels")]
    EmptyImage,

    #[error("image {width}x{height} is too small (need at least 2x2)")]
    ImageTooSmall { width: usize, height: usize },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("co-occurrence matrix is not normalized (sum = {0})")]
    NotNormalized(f64),

    #[error("non-finite input to chart: {0}")]
    NonFiniteInput(f64),

    #[error("sigma is zero; CUSUM threshold would be zero")]
    ZeroSigma,

    #[error("empty sampling pool: {0}")]
    EmptyPool(&'static str),

    #[error("unknown id {0:?} in flags")]
    UnknownId(String),

    #[error("{0} is undefined: no items in the required class")]
    UndefinedRate(&'static str),

    #[error("every bootstrap resample left {0} undefined")]
    AllResamplesUndefined(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported format_version {0}")]
    UnsupportedVersion(u32),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("JSON error: {0}")]
    Json(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
