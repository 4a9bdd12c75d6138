//! The session-wide raster store, shared between the writer, frame ingest
//! and raster fetches.

use std::sync::{Arc, RwLock};

use tableau_core::raster::{Raster, RasterDigest};
use tableau_core::store::{MemoryRasterStore, RasterStore};
use tableau_core::RasterError;

#[derive(Clone, Debug, Default)]
pub struct SharedStore(Arc<RwLock<MemoryRasterStore>>);

impl SharedStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_store(store: MemoryRasterStore) -> Self {
        Self(Arc::new(RwLock::new(store)))
    }

    pub fn put(&self, raster: &Raster) -> RasterDigest {
        self.write(|s| s.put(raster)).expect("memory store never fails")
    }

    pub fn get(&self, digest: &RasterDigest) -> Result<Raster, RasterError> {
        self.0.read().expect("raster store poisoned").get(digest)
    }

    pub fn contains(&self, digest: &RasterDigest) -> bool {
        self.0.read().expect("raster store poisoned").contains(digest)
    }

    pub fn len(&self) -> usize {
        self.0.read().expect("raster store poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Runs `f` with exclusive access, e.g. to serialize a scene into it.
    pub fn write<T>(&self, f: impl FnOnce(&mut dyn RasterStore) -> T) -> T {
        let mut guard = self.0.write().expect("raster store poisoned");
        f(&mut *guard)
    }

    /// Visits every stored raster under a read lock.
    pub fn for_each(&self, mut f: impl FnMut(&RasterDigest, &Raster)) {
        for (d, r) in self.0.read().expect("raster store poisoned").iter() {
            f(d, r);
        }
    }

    /// Read access for APIs that take `&dyn RasterStore`.
    pub fn read<T>(&self, f: impl FnOnce(&dyn RasterStore) -> T) -> T {
        let guard = self.0.read().expect("raster store poisoned");
        f(&*guard)
    }
}
