use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("unknown checkpoint `{0}`")]
    UnknownCheckpoint(String),

    #[error(transparent)]
    Weights(#[from] WeightsError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures while reading or writing a manifest + payload weight pair.
///
/// Every variant has a stable [`code`](WeightsError::code) so callers can
/// tell a bad checksum from a missing tensor without matching on text.
#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("[{}] {path}: unsupported format_version {found} (supported: 1)", Self::UNKNOWN_VERSION)]
    UnknownVersion { path: PathBuf, found: i64 },

    #[error("[{}] {path}: unknown architecture `{found}`", Self::UNKNOWN_ARCHITECTURE)]
    UnknownArchitecture { path: PathBuf, found: String },

    #[error("[{}] {path}: payload sha256 {actual} does not match manifest {expected}", Self::CHECKSUM)]
    ChecksumMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("[{}] missing entry `{layer}.{kind}`", Self::MISSING_ENTRY)]
    MissingEntry { layer: String, kind: String },

    #[error("[{}] `{entry}`: {detail}", Self::SHAPE)]
    Shape { entry: String, detail: String },

    #[error("[{}] {path}: {detail}", Self::MALFORMED)]
    Malformed { path: PathBuf, detail: String },
}

impl WeightsError {
    pub const UNKNOWN_VERSION: &'static str = "E_VERSION";
    pub const UNKNOWN_ARCHITECTURE: &'static str = "E_ARCH";
    pub const CHECKSUM: &'static str = "E_CHECKSUM";
    pub const MISSING_ENTRY: &'static str = "E_MISSING";
    pub const SHAPE: &'static str = "E_SHAPE";
    pub const MALFORMED: &'static str = "E_MALFORMED";

    pub fn code(&self) -> &'static str {
        match self {
            WeightsError::UnknownVersion { .. } => Self::UNKNOWN_VERSION,
            WeightsError::UnknownArchitecture { .. } => Self::UNKNOWN_ARCHITECTURE,
            WeightsError::ChecksumMismatch { .. } => Self::CHECKSUM,
            WeightsError::MissingEntry { .. } => Self::MISSING_ENTRY,
            WeightsError::Shape { .. } => Self::SHAPE,
            WeightsError::Malformed { .. } => Self::MALFORMED,
        }
    }
}
