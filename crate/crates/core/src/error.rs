use thiserror::Error;

use crate::raster::RasterDigest;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("image decode failed: {0}")]
    Decode(String),
    #[error("raster {0} not found in store")]
    Missing(RasterDigest),
    #[error("digest mismatch in {file}: expected {expected}, found {actual}")]
    DigestMismatch {
        file: String,
        expected: RasterDigest,
        actual: String,
    },
    #[error("raster {digest} has kind {found}, expected {expected}")]
    WrongKind {
        digest: RasterDigest,
        expected: &'static str,
        found: &'static str,
    },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}
