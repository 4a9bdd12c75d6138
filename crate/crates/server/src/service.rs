//! Session actors. Each session has one writer thread that owns its
//! [`SessionState`] and drains a command queue; readers see immutable
//! snapshots through a watch channel and events through a broadcast.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use image::RgbaImage;
use serde::Serialize;
use tableau_core::compositor::render_live;
use tableau_core::orchestrator::{JobId, JobStatus};
use tableau_core::raster::{Raster, RasterDigest};
use tableau_core::scene::{Canvas, FeedId, Scene, SceneDoc};
use tokio::sync::{broadcast, mpsc, oneshot, watch};

use crate::backends::Backends;
use crate::bundle::{self, BundleWriter, Manifest};
use crate::command::{Command, CommandAck, CommandEnvelope};
use crate::config::Config;
use crate::error::SessionError;
use crate::frames::{ingest_frame, FrameStore, IngestAck, ParticipantView};
use crate::history::HistoryEntry;
use crate::session::{prepare_prior, GenerationOutcome, JobView, PreparedPrior, SessionId, SessionState};
use crate::store::SharedStore;

const EVENT_CAPACITY: usize = 256;

/// Pushed to every subscriber of a session.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Revision {
        session_id: SessionId,
        revision: usize,
        changed_fields: Vec<String>,
        label: Option<String>,
        issuer: Option<String>,
        command_id: Option<String>,
        active_job: Option<JobView>,
    },
    Job {
        session_id: SessionId,
        job: JobView,
    },
    Frame {
        session_id: SessionId,
        feed_id: FeedId,
        frame_index: u64,
    },
}

/// Read-side view of a session at one revision.
#[derive(Clone, Debug, Serialize)]
pub struct Snapshot {
    pub session_id: SessionId,
    pub revision: usize,
    pub scene_digest: String,
    pub scene: SceneDoc,
    pub active_job: Option<JobView>,
    pub last_job: Option<JobView>,
    pub participants: Vec<ParticipantView>,
    #[serde(skip)]
    pub scene_value: Arc<Scene>,
    #[serde(skip)]
    pub jobs: Arc<BTreeMap<JobId, JobView>>,
}

impl Snapshot {
    fn of(state: &SessionState) -> Self {
        let last = state.history().last().expect("history is never empty");
        Self {
            session_id: state.id(),
            revision: state.revision(),
            scene_digest: last.scene_digest.clone(),
            scene: last.scene.clone(),
            active_job: state.active_job().cloned(),
            last_job: state.last_job().cloned(),
            participants: state.participants(),
            scene_value: Arc::new(state.scene().clone()),
            jobs: Arc::new(state.jobs().clone()),
        }
    }
}

type Reply<T> = oneshot::Sender<Result<T, SessionError>>;

enum Msg {
    Command(CommandEnvelope, Reply<CommandAck>),
    Prior(CommandEnvelope, PreparedPrior, Reply<CommandAck>),
    Join(String, Reply<(FeedId, CommandAck)>),
    Export(PathBuf, Reply<Manifest>),
    GenerationDone(JobId, Box<Result<GenerationOutcome, SessionError>>),
    /// A participant's first frame was frozen.
    Frozen,
    Shutdown,
}

struct Writer {
    state: SessionState,
    inbox: mpsc::UnboundedReceiver<Msg>,
    outbox: mpsc::WeakUnboundedSender<Msg>,
    snapshot: watch::Sender<Arc<Snapshot>>,
    history: Arc<RwLock<Vec<Arc<HistoryEntry>>>>,
    events: broadcast::Sender<Event>,
    autosave: Option<BundleWriter>,
}

impl Writer {
    fn publish(&mut self, ack: Option<&CommandAck>) {
        {
            let mut h = self.history.write().expect("history poisoned");
            let have = h.len();
            h.extend(self.state.history()[have..].iter().cloned());
        }
        let snap = Arc::new(Snapshot::of(&self.state));
        if let Some(ack) = ack.filter(|a| a.appended) {
            if let Some(saver) = &mut self.autosave {
                if let Err(err) = saver.sync(&self.state) {
                    tracing::error!(%err, dir = %saver.dir().display(), "autosave failed");
                }
            }
            let entry = &self.state.history()[ack.revision];
            let _ = self.events.send(Event::Revision {
                session_id: snap.session_id,
                revision: ack.revision,
                changed_fields: ack.changed_fields.clone(),
                label: entry.label.clone(),
                issuer: entry.issuer.clone(),
                command_id: ack.command_id.clone(),
                active_job: snap.active_job.clone(),
            });
        }
        self.snapshot.send_replace(snap);
    }

    fn job_event(&self, job_id: JobId) {
        if let Some(job) = self.state.job(&job_id) {
            let _ = self.events.send(Event::Job { session_id: self.state.id(), job: job.clone() });
        }
    }

    fn run(mut self) {
        while let Some(msg) = self.inbox.blocking_recv() {
            match msg {
                Msg::Command(env, reply) => {
                    let result = self.state.apply(env).map(|(ack, task)| {
                        let job_id = task.as_ref().map(|t| t.job_id);
                        if let Some(task) = task {
                            let outbox = self.outbox.clone();
                            std::thread::spawn(move || {
                                let job_id = task.job_id;
                                let outcome = task.run();
                                if let Some(tx) = outbox.upgrade() {
                                    let _ = tx.send(Msg::GenerationDone(job_id, Box::new(outcome)));
                                }
                            });
                        }
                        (ack, job_id)
                    });
                    if let Ok((ack, job_id)) = &result {
                        self.publish(Some(ack));
                        if let Some(id) = job_id {
                            self.job_event(*id);
                        }
                    }
                    let _ = reply.send(result.map(|(ack, _)| ack));
                }
                Msg::Prior(env, prior, reply) => {
                    let result = self.state.apply_prior(&env, prior);
                    if let Ok(ack) = &result {
                        self.publish(Some(ack));
                    }
                    let _ = reply.send(result);
                }
                Msg::Join(name, reply) => {
                    let result = self.state.join(&name);
                    if let Ok((_, ack)) = &result {
                        self.publish(Some(ack));
                    }
                    let _ = reply.send(result);
                }
                Msg::Export(path, reply) => {
                    let _ = reply.send(bundle::export(&self.state, &path));
                }
                Msg::GenerationDone(job_id, outcome) => {
                    match self.state.finish_generation(job_id, *outcome) {
                        Ok(ack) => self.publish(Some(&ack)),
                        Err(err) => {
                            tracing::warn!(%job_id, %err, "generation failed");
                            self.publish(None);
                        }
                    }
                    self.job_event(job_id);
                }
                Msg::Frozen => {
                    if let Some(saver) = &mut self.autosave {
                        if let Err(err) = saver.sync(&self.state) {
                            tracing::error!(%err, dir = %saver.dir().display(), "autosave failed");
                        }
                    }
                    self.snapshot.send_replace(Arc::new(Snapshot::of(&self.state)));
                }
                Msg::Shutdown => break,
            }
        }
    }
}

/// Cheap, clonable access to one running session.
pub struct SessionHandle {
    pub id: SessionId,
    pub canvas: Canvas,
    tx: mpsc::UnboundedSender<Msg>,
    snapshot: watch::Receiver<Arc<Snapshot>>,
    history: Arc<RwLock<Vec<Arc<HistoryEntry>>>>,
    events: broadcast::Sender<Event>,
    frames: FrameStore,
    store: SharedStore,
    backends: Backends,
}

impl SessionHandle {
    fn spawn(state: SessionState, autosave: Option<BundleWriter>) -> Arc<Self> {
        let (tx, inbox) = mpsc::unbounded_channel();
        let snap = Arc::new(Snapshot::of(&state));
        let (snap_tx, snap_rx) = watch::channel(snap);
        let (events, _) = broadcast::channel(EVENT_CAPACITY);
        let history = Arc::new(RwLock::new(state.history().to_vec()));
        let handle = Arc::new(Self {
            id: state.id(),
            canvas: state.meta().canvas,
            tx: tx.clone(),
            snapshot: snap_rx,
            history: history.clone(),
            events: events.clone(),
            frames: state.frames().clone(),
            store: state.store().clone(),
            backends: state.backends().clone(),
        });
        let mut writer =
            Writer { state, inbox, outbox: tx.downgrade(), snapshot: snap_tx, history, events, autosave };
        if let Some(saver) = &mut writer.autosave {
            if let Err(err) = saver.sync(&writer.state) {
                tracing::error!(%err, "initial autosave failed");
            }
        }
        std::thread::Builder::new()
            .name(format!("session-{}", handle.id))
            .spawn(move || writer.run())
            .expect("spawning a session writer");
        handle
    }

    fn send(&self, msg: Msg) -> Result<(), SessionError> {
        self.tx.send(msg).map_err(|_| SessionError::Closed)
    }

    async fn ask<T>(&self, make: impl FnOnce(Reply<T>) -> Msg) -> Result<T, SessionError> {
        let (tx, rx) = oneshot::channel();
        self.send(make(tx))?;
        rx.await.map_err(|_| SessionError::Closed)?
    }

    fn ask_blocking<T>(&self, make: impl FnOnce(Reply<T>) -> Msg) -> Result<T, SessionError> {
        let (tx, rx) = oneshot::channel();
        self.send(make(tx))?;
        rx.blocking_recv().map_err(|_| SessionError::Closed)?
    }

    pub async fn command(&self, env: CommandEnvelope) -> Result<CommandAck, SessionError> {
        if let Command::UploadPrior { image } = &env.command {
            let (image, canvas, backends) = (image.clone(), self.canvas, self.backends.clone());
            let prior = tokio::task::spawn_blocking(move || prepare_prior(&image, &canvas, &backends))
                .await
                .map_err(|e| SessionError::Io(e.to_string()))??;
            return self.ask(|r| Msg::Prior(env, prior, r)).await;
        }
        self.ask(|r| Msg::Command(env, r)).await
    }

    /// For callers outside an async runtime.
    pub fn command_blocking(&self, env: impl Into<CommandEnvelope>) -> Result<CommandAck, SessionError> {
        let env = env.into();
        if let Command::UploadPrior { image } = &env.command {
            let prior = prepare_prior(image, &self.canvas, &self.backends)?;
            return self.ask_blocking(|r| Msg::Prior(env, prior, r));
        }
        self.ask_blocking(|r| Msg::Command(env, r))
    }

    pub async fn join(&self, display_name: &str) -> Result<(FeedId, CommandAck), SessionError> {
        let name = display_name.to_owned();
        self.ask(|r| Msg::Join(name, r)).await
    }

    pub fn join_blocking(&self, display_name: &str) -> Result<(FeedId, CommandAck), SessionError> {
        let name = display_name.to_owned();
        self.ask_blocking(|r| Msg::Join(name, r))
    }

    fn after_ingest(&self, ack: &IngestAck) {
        if ack.frozen_now {
            let _ = self.send(Msg::Frozen);
        }
        let _ = self.events.send(Event::Frame {
            session_id: self.id,
            feed_id: ack.feed_id.clone(),
            frame_index: ack.frame_index,
        });
    }

    /// Frame ingest bypasses the command queue.
    pub async fn ingest(&self, feed_id: FeedId, bytes: Vec<u8>) -> Result<IngestAck, SessionError> {
        let (frames, store, backends) = (self.frames.clone(), self.store.clone(), self.backends.clone());
        let ack = tokio::task::spawn_blocking(move || ingest_frame(&frames, &store, &backends, &feed_id, &bytes))
            .await
            .map_err(|e| SessionError::Io(e.to_string()))??;
        self.after_ingest(&ack);
        Ok(ack)
    }

    pub fn ingest_blocking(&self, feed_id: &FeedId, bytes: &[u8]) -> Result<IngestAck, SessionError> {
        let ack = ingest_frame(&self.frames, &self.store, &self.backends, feed_id, bytes)?;
        self.after_ingest(&ack);
        Ok(ack)
    }

    pub async fn export(&self, path: &Path) -> Result<Manifest, SessionError> {
        let path = path.to_owned();
        self.ask(|r| Msg::Export(path, r)).await
    }

    pub fn export_blocking(&self, path: &Path) -> Result<Manifest, SessionError> {
        let path = path.to_owned();
        self.ask_blocking(|r| Msg::Export(path, r))
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.borrow().clone()
    }

    /// Participant stats as of now; snapshots only refresh them on scene
    /// changes and first frames.
    pub fn participants(&self) -> Vec<ParticipantView> {
        self.frames.views()
    }

    /// The latest snapshot as JSON, with live participant stats.
    pub fn snapshot_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(&*self.snapshot()).expect("snapshots always serialize");
        v["participants"] = serde_json::to_value(self.participants()).expect("participants always serialize");
        v
    }

    pub fn watch(&self) -> watch::Receiver<Arc<Snapshot>> {
        self.snapshot.clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Event> {
        self.events.subscribe()
    }

    pub fn history(&self) -> Vec<Arc<HistoryEntry>> {
        self.history.read().expect("history poisoned").clone()
    }

    pub fn history_entry(&self, index: usize) -> Option<Arc<HistoryEntry>> {
        self.history.read().expect("history poisoned").get(index).cloned()
    }

    pub fn raster(&self, digest: &RasterDigest) -> Option<Raster> {
        self.store.get(digest).ok()
    }

    pub fn job(&self, id: &JobId) -> Option<JobView> {
        self.snapshot().jobs.get(id).cloned()
    }

    /// Live composite of the current scene. Feeds that have not sent a
    /// frame yet are left out.
    pub fn render(&self) -> Result<RgbaImage, SessionError> {
        let snap = self.snapshot();
        let frames = self.frames.render_frames(&snap.scene_value);
        let mut scene = (*snap.scene_value).clone();
        scene.feeds.retain(|f| frames.contains_key(&f.feed_id));
        Ok(render_live(&scene, &frames)?)
    }

    /// Blocks until no job is active, returning the final job views.
    pub fn wait_idle_blocking(&self, timeout: Duration) -> Result<Arc<Snapshot>, SessionError> {
        let deadline = Instant::now() + timeout;
        loop {
            let snap = self.snapshot();
            if snap.active_job.is_none() {
                return Ok(snap);
            }
            if Instant::now() >= deadline {
                return Err(SessionError::Timeout);
            }
            std::thread::sleep(Duration::from_millis(2));
        }
    }

    pub async fn wait_idle(&self, timeout: Duration) -> Result<Arc<Snapshot>, SessionError> {
        let mut rx = self.snapshot.clone();
        let waited = tokio::time::timeout(timeout, rx.wait_for(|s| s.active_job.is_none())).await;
        match waited {
            Ok(Ok(snap)) => Ok(snap.clone()),
            Ok(Err(_)) => Err(SessionError::Closed),
            Err(_) => Err(SessionError::Timeout),
        }
    }

    /// Runs a command and, for Generate-class commands, waits for the job
    /// and returns the completion acknowledgement.
    pub fn run_blocking(&self, env: impl Into<CommandEnvelope>, timeout: Duration) -> Result<CommandAck, SessionError> {
        let ack = self.command_blocking(env)?;
        let Some(job_id) = ack.job_id else { return Ok(ack) };
        let snap = self.wait_idle_blocking(timeout)?;
        let job = snap.jobs.get(&job_id).cloned().ok_or_else(|| SessionError::UnknownJob(job_id.to_string()))?;
        match (job.status, job.entry) {
            (JobStatus::Done, Some(entry)) => {
                Ok(CommandAck {
                    revision: entry,
                    appended: true,
                    changed_fields: changed_between(&self.history(), entry),
                    job_id: Some(job_id),
                    command_id: ack.command_id,
                })
            }
            _ => Err(SessionError::Generation(tableau_core::BackendError::Rejected(
                job.error.unwrap_or_else(|| format!("job ended {:?}", job.status)),
            ))),
        }
    }

    fn shutdown(&self) {
        let _ = self.send(Msg::Shutdown);
    }
}

fn changed_between(history: &[Arc<HistoryEntry>], index: usize) -> Vec<String> {
    match index.checked_sub(1) {
        Some(prev) => history[prev].scene.changed_fields(&history[index].scene).into_iter().map(str::to_owned).collect(),
        None => Vec::new(),
    }
}

/// All sessions hosted by one server.
pub struct SessionManager {
    config: Config,
    backends: Backends,
    sessions: RwLock<BTreeMap<SessionId, Arc<SessionHandle>>>,
}

impl SessionManager {
    pub fn new(config: Config, backends: Backends) -> Arc<Self> {
        Arc::new(Self { config, backends, sessions: RwLock::new(BTreeMap::new()) })
    }

    /// Offline manager with mock backends.
    pub fn mock() -> Arc<Self> {
        let config = Config::mock();
        let backends = Backends::mock(&config);
        Self::new(config, backends)
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    fn autosave_dir(&self, id: SessionId) -> Option<PathBuf> {
        self.config.data_dir.as_ref().map(|d| d.join(id.to_string()))
    }

    pub fn create(&self, canvas: Option<Canvas>) -> Result<Arc<SessionHandle>, SessionError> {
        let canvas = canvas.unwrap_or(self.config.canvas);
        let mut backends = self.backends.clone();
        if canvas != self.config.canvas && self.config.mock_backends {
            let mut cfg = self.config.clone();
            cfg.canvas = canvas;
            backends.segmenter = Backends::mock(&cfg).segmenter;
        }
        let state = SessionState::new(SessionId::new(), canvas, backends)?;
        let autosave = match self.autosave_dir(state.id()) {
            Some(dir) => Some(BundleWriter::create(dir)?),
            None => None,
        };
        let handle = SessionHandle::spawn(state, autosave);
        self.sessions.write().expect("sessions poisoned").insert(handle.id, handle.clone());
        Ok(handle)
    }

    pub fn get(&self, id: &str) -> Result<Arc<SessionHandle>, SessionError> {
        let sid: SessionId = id.parse()?;
        self.sessions
            .read()
            .expect("sessions poisoned")
            .get(&sid)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_owned()))
    }

    pub fn list(&self) -> Vec<Arc<SessionHandle>> {
        self.sessions.read().expect("sessions poisoned").values().cloned().collect()
    }

    pub fn delete(&self, id: &str) -> Result<(), SessionError> {
        let sid: SessionId = id.parse()?;
        let handle = self
            .sessions
            .write()
            .expect("sessions poisoned")
            .remove(&sid)
            .ok_or_else(|| SessionError::UnknownSession(id.to_owned()))?;
        handle.shutdown();
        Ok(())
    }

    /// Loads a bundle as a running session under its original id.
    pub fn import(&self, dir: &Path) -> Result<Arc<SessionHandle>, SessionError> {
        let imported = bundle::import(dir)?;
        let id = imported.meta.session_id;
        if self.sessions.read().expect("sessions poisoned").contains_key(&id) {
            return Err(SessionError::AlreadyExists(id.to_string()));
        }
        let entries = imported.history.len();
        let state =
            SessionState::restore(imported.meta, imported.history, imported.store, imported.frames, self.backends.clone())?;
        let autosave = match self.autosave_dir(id) {
            Some(d) if d == dir => Some(BundleWriter::resume(d, entries)),
            Some(d) => Some(BundleWriter::create(d)?),
            None => None,
        };
        let handle = SessionHandle::spawn(state, autosave);
        self.sessions.write().expect("sessions poisoned").insert(id, handle.clone());
        Ok(handle)
    }

    /// Re-opens every autosaved session under the data directory.
    pub fn recover(&self) -> Vec<(PathBuf, Result<SessionId, SessionError>)> {
        let Some(root) = &self.config.data_dir else { return Vec::new() };
        let Ok(listing) = std::fs::read_dir(root) else { return Vec::new() };
        let mut dirs: Vec<PathBuf> =
            listing.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.join(bundle::MANIFEST_FILE).exists()).collect();
        dirs.sort();
        dirs.into_iter().map(|d| {
            let r = self.import(&d).map(|h| h.id);
            (d, r)
        }).collect()
    }
}

impl Drop for SessionManager {
    fn drop(&mut self) {
        for handle in self.sessions.get_mut().expect("sessions poisoned").values() {
            handle.shutdown();
        }
    }
}
