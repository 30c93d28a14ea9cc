use thiserror::Error;

/// Errors produced by the numeric and quantization routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlrqError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("nothing to sketch: matrix is zero")]
    ZeroMatrix,

    #[error("sketch projection vanished after {attempts} Gaussian draws")]
    DegenerateProjection { attempts: usize },

    #[error("svd oracle limited to min(m, n) <= {limit}, got {actual}; use the sketch path instead")]
    OracleTooLarge { limit: usize, actual: usize },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

impl FlrqError {
    pub(crate) fn shape(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        FlrqError::DimensionMismatch {
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        FlrqError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, FlrqError>;
