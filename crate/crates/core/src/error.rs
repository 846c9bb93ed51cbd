use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate histogram: image has a single intensity ({0})")]
    DegenerateHistogram(u8),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("training diverged in epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("not enough samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("document {0} has no descriptors")]
    EmptyDocument(String),

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: String,
        expected: String,
        found: String,
    },

    #[error("unsupported format version {version} in {path}")]
    UnsupportedVersion { path: String, version: u32 },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: String, reason: String },

    #[error("manifest {path}, line {line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("missing artifact {path}: run stage `{stage}` first")]
    MissingArtifact { path: PathBuf, stage: &'static str },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
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
