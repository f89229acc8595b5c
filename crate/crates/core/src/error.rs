use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite value at index {index}: {value}")]
    NonFinite { index: usize, value: f64 },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("bad magic: expected PTYW, found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported weight file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("payload length mismatch: header declares {declared} floats, payload holds {actual}")]
    PayloadLengthMismatch { declared: usize, actual: usize },

    #[error("descriptor mismatch: {0}")]
    DescriptorMismatch(String),

    #[error("missing manifest at {0}")]
    MissingManifest(PathBuf),

    #[error("missing sample file {0}")]
    MissingSample(PathBuf),

    #[error("count mismatch: manifest declares {declared} samples, lists {listed}")]
    CountMismatch { declared: usize, listed: usize },

    #[error("corrupt image file {path}: {reason}")]
    CorruptImage { path: PathBuf, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("wrong trigger strategy: expected {expected}, key uses {actual}")]
    WrongStrategy {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("invalid mapping: {0}")]
    InvalidMapping(String),

    #[error("replace blending needs a foreground mask")]
    MissingMask,

    #[error("training failed: {reason}; history: {history}")]
    TrainingFailed { reason: String, history: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
