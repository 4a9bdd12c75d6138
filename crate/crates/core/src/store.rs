//! Content-addressed raster storage.
//!
//! Rasters are keyed by [`RasterDigest`]; a directory store lays them out as
//! `<digest>.png` files and re-verifies the digest on every read.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::RasterError;
use crate::raster::{Raster, RasterDigest};

pub trait RasterStore {
    /// Stores a raster and returns its digest. Storing the same content twice
    /// is a no-op.
    fn put(&mut self, raster: &Raster) -> Result<RasterDigest, RasterError>;
    fn get(&self, digest: &RasterDigest) -> Result<Raster, RasterError>;
    fn contains(&self, digest: &RasterDigest) -> bool;
}

#[derive(Clone, Debug, Default)]
pub struct MemoryRasterStore {
    rasters: HashMap<RasterDigest, Raster>,
}

impl MemoryRasterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rasters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rasters.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&RasterDigest, &Raster)> {
        self.rasters.iter()
    }
}

impl RasterStore for MemoryRasterStore {
    fn put(&mut self, raster: &Raster) -> Result<RasterDigest, RasterError> {
        let digest = raster.digest();
        self.rasters.entry(digest.clone()).or_insert_with(|| raster.clone());
        Ok(digest)
    }

    fn get(&self, digest: &RasterDigest) -> Result<Raster, RasterError> {
        self.rasters
            .get(digest)
            .cloned()
            .ok_or_else(|| RasterError::Missing(digest.clone()))
    }

    fn contains(&self, digest: &RasterDigest) -> bool {
        self.rasters.contains_key(digest)
    }
}

/// A directory of `<digest>.png` files.
#[derive(Clone, Debug)]
pub struct DirRasterStore {
    root: PathBuf,
}

impl DirRasterStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, RasterError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn file_name(digest: &RasterDigest) -> String {
        format!("{digest}.png")
    }

    pub fn path_of(&self, digest: &RasterDigest) -> PathBuf {
        self.root.join(Self::file_name(digest))
    }
}

fn io_err(path: &Path, e: std::io::Error) -> RasterError {
    RasterError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

impl RasterStore for DirRasterStore {
    fn put(&mut self, raster: &Raster) -> Result<RasterDigest, RasterError> {
        let digest = raster.digest();
        let path = self.path_of(&digest);
        if !path.exists() {
            let tmp = path.with_extension("png.tmp");
            fs::write(&tmp, raster.to_png()).map_err(|e| io_err(&tmp, e))?;
            fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))?;
        }
        Ok(digest)
    }

    fn get(&self, digest: &RasterDigest) -> Result<Raster, RasterError> {
        let path = self.path_of(digest);
        if !path.exists() {
            return Err(RasterError::Missing(digest.clone()));
        }
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        let file = path.display().to_string();
        let raster = Raster::from_png(&bytes).map_err(|e| RasterError::DigestMismatch {
            file: file.clone(),
            expected: digest.clone(),
            actual: format!("undecodable ({e})"),
        })?;
        let actual = raster.digest();
        if &actual != digest {
            return Err(RasterError::DigestMismatch {
                file,
                expected: digest.clone(),
                actual: actual.0,
            });
        }
        Ok(raster)
    }

    fn contains(&self, digest: &RasterDigest) -> bool {
        self.path_of(digest).exists()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, RgbaImage};

    #[test]
    fn dir_store_round_trip_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = DirRasterStore::open(dir.path()).unwrap();
        let raster = Raster::Gray(GrayImage::from_pixel(3, 3, Luma([255])));
        let digest = store.put(&raster).unwrap();
        assert_eq!(store.get(&digest).unwrap(), raster);

        let other = Raster::Rgba(RgbaImage::new(3, 3));
        fs::write(store.path_of(&digest), other.to_png()).unwrap();
        match store.get(&digest) {
            Err(RasterError::DigestMismatch { file, .. }) => assert!(file.ends_with(&DirRasterStore::file_name(&digest))),
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn memory_store_dedups() {
        let mut store = MemoryRasterStore::new();
        let raster = Raster::Gray(GrayImage::new(2, 2));
        let a = store.put(&raster).unwrap();
        let b = store.put(&raster).unwrap();
        assert_eq!(a, b);
        assert_eq!(store.len(), 1);
        assert!(matches!(store.get(&RasterDigest("nope".into())), Err(RasterError::Missing(_))));
    }
}
