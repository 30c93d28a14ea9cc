//! On-disk formats: the tensor container, per-layer bundles and JSON reports.
//!
//! All multi-byte values are little-endian and payloads carry no padding.

mod bundle;
mod container;
mod pack;
mod report;

pub use bundle::{read_bundle, write_bundle, BundleMeta, LayerBundle, BUNDLE_FILES};
pub use container::{
    read_container, read_container_file, write_container, write_container_file, Dtype, TensorContainer,
    TensorData, CONTAINER_MAGIC, CONTAINER_VERSION,
};
pub use pack::{pack_codes, packed_len, unpack_codes};
pub use report::{emit_report, extra_bits, extra_bits_with_meta, Aggregate, LayerSummary, Report, REPORT_SCHEMA};

use thiserror::Error;

use crate::error::FlrqError;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("bad magic: expected FLRQTEN\\0")]
    BadMagic,

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),

    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),

    #[error("truncated input: {0}")]
    Truncated(&'static str),

    #[error("{0} trailing byte(s) after payload")]
    TrailingBytes(usize),

    #[error("code {code} at index {index} does not fit in {bits} bits")]
    CodeOutOfRange { index: usize, code: u8, bits: u8 },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Numeric(#[from] FlrqError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(std::io::Error),
}

impl From<std::io::Error> for IoError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            IoError::Truncated("unexpected end of stream")
        } else {
            IoError::Io(e)
        }
    }
}

pub type IoResult<T> = std::result::Result<T, IoError>;
