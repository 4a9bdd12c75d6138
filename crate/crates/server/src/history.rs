//! Append-only session history.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tableau_core::orchestrator::JobRecord;
use tableau_core::raster::RasterDigest;
use tableau_core::scene::SceneDoc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub index: usize,
    pub timestamp_ms: u64,
    pub label: Option<String>,
    /// The command that produced the entry, as recorded.
    pub command: Option<Value>,
    pub issuer: Option<String>,
    pub scene: SceneDoc,
    pub scene_digest: String,
    /// Parameters of the generation job, for generation entries.
    pub job: Option<JobRecord>,
    /// Digest of the raw backend result, stored as RGBA.
    pub result_digest: Option<RasterDigest>,
    /// Set when the entry restores an earlier one.
    pub restored_from: Option<usize>,
    /// The entry this scene originally came from; undo steps back from it.
    pub origin: usize,
}

impl HistoryEntry {
    /// Recomputes the scene digest and compares it with the recorded one.
    pub fn verify(&self) -> bool {
        self.scene.digest() == self.scene_digest
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Compact listing row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistorySummary {
    pub index: usize,
    pub timestamp_ms: u64,
    pub label: Option<String>,
    pub issuer: Option<String>,
    pub scene_digest: String,
    pub environment: Option<RasterDigest>,
    pub result_digest: Option<RasterDigest>,
    pub restored_from: Option<usize>,
}

impl From<&HistoryEntry> for HistorySummary {
    fn from(e: &HistoryEntry) -> Self {
        Self {
            index: e.index,
            timestamp_ms: e.timestamp_ms,
            label: e.label.clone(),
            issuer: e.issuer.clone(),
            scene_digest: e.scene_digest.clone(),
            environment: e.scene.environment.as_ref().map(|r| r.digest.clone()),
            result_digest: e.result_digest.clone(),
            restored_from: e.restored_from,
        }
    }
}
