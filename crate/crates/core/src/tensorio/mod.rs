//! File boundary between out-of-process CNN feature extraction and the
//! quantization pipeline.
//!
//! * `.dbf` feature-map files: `DBF1`, then little-endian u32 `H`, `W`, `C`,
//!   then `H·W·C` little-endian f32 values, row-major and channel-last.
//! * Tab-separated dataset manifests binding files to subjects, with
//!   masked/unmasked oversampling for class-imbalanced sets.

mod featuremap;
mod manifest;

pub use featuremap::{
    load_feature_map, read_feature_map, save_feature_map, write_feature_map, FeatureMap,
    FeatureVectorSet, FEATURE_MAGIC, HEADER_LEN,
};
pub use manifest::{
    load_manifest, oversample, oversample_indices, parse_manifest, DatasetManifest, ManifestError,
    ManifestRecord, OversampleWarning, Oversampled,
};

use thiserror::Error;

/// Errors raised while decoding or validating the crate's binary formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("payload mismatch: header implies {expected} bytes, file has {actual}")]
    PayloadMismatch { expected: u64, actual: u64 },
    #[error("invalid dimensions: {0}")]
    InvalidDims(&'static str),
    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },
    #[error("invalid parameter: {0}")]
    InvalidValue(String),
}
