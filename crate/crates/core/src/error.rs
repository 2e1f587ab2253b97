use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("frame mismatch: {0}")]
    FrameMismatch(String),

    #[error("mask is empty")]
    EmptyMask,

    #[error("region is empty")]
    EmptyRegion,

    #[error("both regions are empty")]
    BothEmpty,

    #[error("run lengths sum to {got}, expected {expected}")]
    LengthMismatch { got: u64, expected: u64 },

    #[error("class `{0}` has no scores")]
    EmptyClass(String),

    #[error("resize to {width}x{height} is degenerate")]
    DegenerateResize { width: usize, height: usize },

    #[error("instance {width}x{height} does not fit background {bg_width}x{bg_height}")]
    InstanceTooLarge {
        width: usize,
        height: usize,
        bg_width: usize,
        bg_height: usize,
    },

    #[error("feasible region is empty")]
    EmptyFeasibleRegion,

    #[error("image is smaller than the {window}x{window} SSIM window")]
    TooSmall { window: usize },

    #[error("pairing error: {0}")]
    PairingError(String),

    #[error("enhancement weights must be finite, non-negative and sum to a positive value")]
    InvalidWeights,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("generated sample violates an invariant: {0}")]
    InvariantViolation(String),

    #[error("corpus exhausted: {0}")]
    ExhaustedCorpus(String),

    #[error("cannot read {}: {source}", path.display())]
    UnreadableFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema violation in {}: {message}", path.display())]
    SchemaViolation { path: PathBuf, message: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode or encode image {}: {message}", path.display())]
    Codec { path: PathBuf, message: String },
}

impl Error {
    /// Domain errors map to exit code 2, I/O failures to exit code 1.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::UnreadableFile { .. } | Error::Io { .. } | Error::Codec { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
