use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("payload size mismatch in {path}: expected {expected} bytes, found {found}")]
    PayloadSizeMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in volume data")]
    NonFiniteData,

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid grid geometry: {0}")]
    InvalidGeometry(String),

    #[error("grid too small for central differences: {0:?} (need >= 3 per axis)")]
    GridTooSmall([usize; 3]),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("non-diffeomorphic field: {count} voxels ({fraction:.6} of grid) have J <= 0")]
    NonDiffeomorphicField { count: usize, fraction: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("region {0} has no voxels")]
    EmptyRegion(usize),

    #[error("label {label} exceeds region count {m}")]
    LabelOutOfRange { label: usize, m: usize },

    #[error("parcellation failed after {0} attempts")]
    ParcellationFailed(usize),

    #[error("unknown subject {0} in embedding table")]
    UnknownSubject(String),

    #[error("embedding of subject {0} is a zero vector")]
    ZeroVector(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("missing forward cache")]
    MissingForwardCache,

    #[error("empty batch")]
    EmptyBatch,

    #[error("subject {0} has no post-operative score")]
    UnlabeledSubject(String),

    #[error("degenerate normalization statistics for {0} (zero std)")]
    DegenerateNormStats(&'static str),

    #[error("missing embedding for subject {0}")]
    MissingEmbedding(String),

    #[error("subject {0} has zero baseline score")]
    ZeroBaseline(String),

    #[error("subject {0} has no post-operative score")]
    MissingPostScore(String),

    #[error("cohort contains a single class")]
    SingleClassCohort,

    #[error("confusion counts have an empty class")]
    EmptyClass,

    #[error("empty input")]
    EmptyInput,

    #[error("requested warp has non-positive Jacobian: {0}")]
    NonPositiveJacobianRequested(String),

    #[error("invalid cohort spec: {0}")]
    SpecInvalid(String),

    #[error("invalid record {subject}: {reason}")]
    InvalidRecord { subject: String, reason: String },

    #[error("malformed {what} {path}: {reason}")]
    Parse {
        what: &'static str,
        path: PathBuf,
        reason: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: &'static str, path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Parse {
            what,
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}
