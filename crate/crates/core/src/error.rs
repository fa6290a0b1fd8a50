use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("malformed NIfTI header: {0}")]
    MalformedHeader(String),
    #[error("volume contains {count} non-finite voxel(s)")]
    NonFiniteVoxels { count: usize },
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid spacing: {0}")]
    InvalidSpacing(String),
    #[error("volume is not in canonical RAS orientation (found {0})")]
    NotCanonical(String),
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("label {label} from {source_name} source has no mapping in the fusion policy")]
    UnmappedLabel { source_name: &'static str, label: u16 },
    #[error("label {0} is not part of the schema")]
    UnknownLabel(u16),
    #[error("invalid label schema: {0}")]
    InvalidSchema(String),
    #[error("invalid fusion policy: {0}")]
    InvalidPolicy(String),

    #[error("MIP is not normalized to [0, 1]")]
    NotNormalized,
    #[error("training set contains a single tracer class")]
    SingleClassTrainingSet,
    #[error("model expects {expected} features, extractor produced {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("failed to launch adapter `{command}`: {reason}")]
    AdapterLaunchFailure { command: String, reason: String },
    #[error("adapter protocol error: {0}")]
    AdapterProtocolError(String),
    #[error("adapter exceeded its deadline of {0:?}")]
    AdapterTimeout(Duration),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("volume is empty")]
    EmptyVolume,
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    DivergenceDetected { epoch: usize, loss: f64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("no reports to aggregate")]
    EmptyReportList,

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("manifest unreadable: {0}")]
    ManifestUnreadable(String),
    #[error("invalid phantom spec: {0}")]
    SpecInvalid(String),
}

impl Error {
    /// Read-side I/O error: a missing file maps to [`Error::FileNotFound`].
    pub(crate) fn read_io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path)
        } else {
            Error::IoFailure { path, source }
        }
    }

    pub(crate) fn write_io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }
}
