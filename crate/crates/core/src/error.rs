use std::io;

use thiserror::Error;

/// Errors produced by the quantization pipeline and its file formats.
#[derive(Debug, Error)]
pub enum PotError {
    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("unknown dtype tag {0}")]
    UnknownDType(u8),

    #[error("truncated payload: needed {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },

    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(usize),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("unsupported bit-width {0} (expected 2, 3 or 4)")]
    UnsupportedBitWidth(u32),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),

    #[error("scale bits {bits:#06x} violate kernel preconditions: {reason}")]
    InvalidScale { bits: u16, reason: &'static str },

    #[error("group (group {group}, column {column}) magnitude {max_abs} exceeds the representable FP16 range")]
    ScaleOutOfRange {
        group: usize,
        column: usize,
        max_abs: f64,
    },

    #[error("exponent {exponent} out of range for {bits}-bit codes")]
    ExponentOutOfRange { exponent: u8, bits: u32 },

    #[error("non-zero padding bits in packed word {0}")]
    NonCanonicalPadding(usize),

    #[error("unknown gradient mode {0:?}")]
    UnknownGradMode(String),

    #[error("calibration diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("non-finite intermediate in {0}")]
    NonFiniteIntermediate(&'static str),
}

pub type Result<T> = std::result::Result<T, PotError>;
