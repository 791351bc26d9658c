use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the motion-modeling pipeline.
#[derive(Debug, Error)]
pub enum GimmError {
    #[error("not a .flo file: bad magic {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("truncated file: expected {expected} bytes of payload, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid motion spec: {0}")]
    InvalidSpec(String),

    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),

    #[error("timestep {0} outside [0, 1]")]
    TimestepOutOfRange(f64),

    #[error("degenerate dimensions {h}x{w}: both must be at least 2")]
    DegenerateDims { h: usize, w: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate splatting weight: denominator {0} <= 1e-6")]
    DegenerateWeight(f64),

    #[error("instance scale mismatch: {0} vs {1}")]
    ScaleMismatch(f64, f64),

    #[error("input too small: {0}")]
    TooSmall(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),

    #[error("checkpoint checksum failure: {0}")]
    ChecksumFailure(String),

    #[error("motion model `{method}` violated its output contract: {detail}")]
    ContractViolation { method: String, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, GimmError>;

impl GimmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GimmError::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_timestep(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(GimmError::TimestepOutOfRange(t))
    }
}
