use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("zero variance input")]
    ZeroVariance,

    #[error("class {0} has no samples")]
    EmptyClass(u32),

    #[error("bit width mismatch: {left} vs {right}")]
    BitWidthMismatch { left: usize, right: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("pixel value {0} outside [0, 1]")]
    BadRange(f64),

    #[error("image too small for {scales} scales: {height}x{width}")]
    TooSmall {
        height: usize,
        width: usize,
        scales: usize,
    },

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("optimisation diverged at step {0}")]
    Diverged(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },

    #[error("checksum mismatch")]
    ChecksumMismatch,

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
