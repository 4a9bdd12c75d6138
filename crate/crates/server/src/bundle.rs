//! Session bundles: a directory holding `manifest.json`, the
//! content-addressed `rasters/` store and an append-only `history.jsonl`.
//!
//! The same layout serves explicit export and the incremental autosave.

use std::collections::{BTreeSet, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tableau_core::raster::{Raster, RasterDigest};
use tableau_core::scene::{Canvas, FeedId, RasterRef, Scene, RASTER_DIR, SCENE_SCHEMA_VERSION};
use tableau_core::store::{DirRasterStore, MemoryRasterStore, RasterStore};

use crate::error::SessionError;
use crate::frames::{frame_from_parts, FrameStore, Participant};
use crate::history::{now_ms, HistoryEntry};
use crate::session::{SessionId, SessionMeta, SessionState};
use crate::store::SharedStore;

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;
pub const BUNDLE_FORMAT: &str = "tableau-session";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const HISTORY_FILE: &str = "history.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenRecord {
    /// Color with the person alpha in the alpha channel.
    pub frame: RasterRef,
    pub background: RasterRef,
    pub low_confidence: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRecord {
    pub feed_id: FeedId,
    pub display_name: String,
    pub frozen: Option<FrozenRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub format: String,
    pub session_id: SessionId,
    pub canvas: Canvas,
    pub revision: usize,
    pub next_feed: u32,
    #[serde(default)]
    pub moved: BTreeSet<FeedId>,
    pub participants: Vec<ParticipantRecord>,
    pub written_ms: u64,
}

fn io(path: &Path, e: std::io::Error) -> SessionError {
    SessionError::Io(format!("{}: {e}", path.display()))
}

fn manifest_of(state: &SessionState) -> Manifest {
    let meta = state.meta();
    let participants = state
        .frames()
        .participants()
        .into_iter()
        .map(|(feed_id, p)| ParticipantRecord {
            frozen: match (&p.frozen_digest, &p.frozen_background_digest, &p.frozen) {
                (Some(f), Some(b), Some(frame)) => Some(FrozenRecord {
                    frame: RasterRef::new(f.clone()),
                    background: RasterRef::new(b.clone()),
                    low_confidence: frame.low_confidence,
                }),
                _ => None,
            },
            feed_id,
            display_name: p.display_name,
        })
        .collect();
    Manifest {
        schema_version: BUNDLE_SCHEMA_VERSION,
        format: BUNDLE_FORMAT.into(),
        session_id: meta.session_id,
        canvas: meta.canvas,
        revision: state.revision(),
        next_feed: meta.next_feed,
        moved: meta.moved.clone(),
        participants,
        written_ms: now_ms(),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), SessionError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io(path, e))
}

/// Keeps a bundle directory in step with a session, writing only what is
/// new since the last sync.
#[derive(Debug)]
pub struct BundleWriter {
    dir: PathBuf,
    written_entries: usize,
    written_rasters: HashSet<RasterDigest>,
}

impl BundleWriter {
    /// Starts a fresh bundle at `dir`, replacing any previous history there.
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self, SessionError> {
        let dir = dir.into();
        fs::create_dir_all(dir.join(RASTER_DIR)).map_err(|e| io(&dir, e))?;
        let history = dir.join(HISTORY_FILE);
        if history.exists() {
            fs::remove_file(&history).map_err(|e| io(&history, e))?;
        }
        Ok(Self { dir, written_entries: 0, written_rasters: HashSet::new() })
    }

    /// Continues a bundle already holding `entries` history lines.
    pub fn resume(dir: impl Into<PathBuf>, entries: usize) -> Self {
        Self { dir: dir.into(), written_entries: entries, written_rasters: HashSet::new() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Rasters first, then history lines, then the manifest, so a crash at
    /// any point leaves every written entry loadable.
    pub fn sync(&mut self, state: &SessionState) -> Result<(), SessionError> {
        let mut rasters = DirRasterStore::open(self.dir.join(RASTER_DIR))?;
        let mut pending: Vec<(RasterDigest, Raster)> = Vec::new();
        state.store().for_each(|d, r| {
            if !self.written_rasters.contains(d) {
                pending.push((d.clone(), r.clone()));
            }
        });
        for (d, r) in pending {
            rasters.put(&r)?;
            self.written_rasters.insert(d);
        }

        let history = state.history();
        if self.written_entries < history.len() {
            let path = self.dir.join(HISTORY_FILE);
            let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| io(&path, e))?;
            let mut buf = Vec::new();
            for entry in &history[self.written_entries..] {
                serde_json::to_writer(&mut buf, &**entry).expect("history entries always serialize");
                buf.push(b'\n');
            }
            file.write_all(&buf).and_then(|_| file.sync_data()).map_err(|e| io(&path, e))?;
            self.written_entries = history.len();
        }

        let manifest = serde_json::to_vec_pretty(&manifest_of(state)).expect("manifests always serialize");
        write_atomic(&self.dir.join(MANIFEST_FILE), &manifest)
    }
}

/// Writes a complete bundle of `state` to `dir`.
pub fn export(state: &SessionState, dir: &Path) -> Result<Manifest, SessionError> {
    let mut writer = BundleWriter::create(dir)?;
    writer.sync(state)?;
    Ok(manifest_of(state))
}

/// A verified bundle, ready to become a session.
pub struct Imported {
    pub manifest: Manifest,
    pub meta: SessionMeta,
    pub history: Vec<HistoryEntry>,
    pub store: SharedStore,
    pub frames: FrameStore,
}

fn load_manifest(dir: &Path) -> Result<Manifest, SessionError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| SessionError::Io(format!("{}: {e}", path.display())))?;
    let found = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != BUNDLE_SCHEMA_VERSION {
        return Err(SessionError::SchemaVersionMismatch { found, expected: BUNDLE_SCHEMA_VERSION });
    }
    serde_json::from_value(value).map_err(|e| SessionError::Io(format!("{}: {e}", path.display())))
}

fn load_history(dir: &Path) -> Result<Vec<HistoryEntry>, SessionError> {
    let path = dir.join(HISTORY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str::<HistoryEntry>(line) {
            Ok(entry) => out.push(entry),
            // A torn final line from an interrupted autosave.
            Err(e) if i + 1 == lines.len() && !text.ends_with('\n') => {
                tracing::warn!(line = i + 1, %e, "ignoring truncated last history line");
            }
            Err(e) => return Err(SessionError::Io(format!("{} line {}: {e}", path.display(), i + 1))),
        }
    }
    Ok(out)
}

/// Reads a bundle, checking the schema version, every raster digest and
/// every history entry's scene digest.
pub fn import(dir: &Path) -> Result<Imported, SessionError> {
    let manifest = load_manifest(dir)?;
    let raster_dir = dir.join(RASTER_DIR);
    let disk = DirRasterStore::open(&raster_dir)?;
    let mut mem = MemoryRasterStore::new();
    let listing = fs::read_dir(&raster_dir).map_err(|e| io(&raster_dir, e))?;
    let mut names: Vec<PathBuf> = listing.filter_map(|e| e.ok().map(|e| e.path())).collect();
    names.sort();
    for path in names {
        let Some(stem) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".png")) else {
            continue;
        };
        let raster = disk.get(&RasterDigest(stem.to_owned()))?;
        mem.put(&raster)?;
    }

    let history_path = dir.join(HISTORY_FILE);
    let history = load_history(dir)?;
    if history.is_empty() {
        return Err(SessionError::Io(format!("{}: no history entries", history_path.display())));
    }
    for (i, entry) in history.iter().enumerate() {
        let file = format!("{} line {}", history_path.display(), i + 1);
        if entry.index != i {
            return Err(SessionError::DigestMismatch { file, detail: format!("entry index {} out of order", entry.index) });
        }
        if entry.scene.schema_version != SCENE_SCHEMA_VERSION {
            return Err(SessionError::SchemaVersionMismatch {
                found: entry.scene.schema_version,
                expected: SCENE_SCHEMA_VERSION,
            });
        }
        if !entry.verify() {
            return Err(SessionError::DigestMismatch {
                file,
                detail: format!("scene digest {} does not match its snapshot", entry.scene_digest),
            });
        }
        let scene = Scene::from_doc(&entry.scene, &mem)?;
        if scene.digest() != entry.scene_digest {
            return Err(SessionError::DigestMismatch { file, detail: "scene does not round-trip".into() });
        }
        let job = entry.job.iter().flat_map(|j| std::iter::once(&j.init_digest).chain(&j.mask_digest));
        for d in entry.result_digest.iter().chain(job) {
            mem.get(d)?;
        }
    }

    let frames = FrameStore::new();
    for p in &manifest.participants {
        let mut participant = Participant::new(&p.display_name);
        if let Some(f) = &p.frozen {
            let (Raster::Rgba(frame), Raster::Rgba(bg)) = (mem.get(&f.frame.digest)?, mem.get(&f.background.digest)?)
            else {
                return Err(SessionError::DigestMismatch {
                    file: f.frame.path.clone(),
                    detail: "frozen frame is not an RGBA raster".into(),
                });
            };
            let matted = Arc::new(frame_from_parts(&frame, &bg, f.low_confidence));
            participant.frozen = Some(matted.clone());
            participant.latest = Some(matted);
            participant.frozen_digest = Some(f.frame.digest.clone());
            participant.latest_digest = Some(f.frame.digest.clone());
            participant.frozen_background_digest = Some(f.background.digest.clone());
        }
        frames.register(p.feed_id.clone(), participant);
    }

    let meta = SessionMeta {
        session_id: manifest.session_id,
        canvas: manifest.canvas,
        next_feed: manifest.next_feed,
        moved: manifest.moved.clone(),
    };
    Ok(Imported { manifest, meta, history, store: SharedStore::from_store(mem), frames })
}
