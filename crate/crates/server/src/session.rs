//! Authoritative per-session state. Every method here runs on the session's
//! single writer; generation work is handed out as a [`GenerationTask`]
//! and its outcome fed back through [`SessionState::finish_generation`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::{GrayImage, RgbImage, RgbaImage};
use serde::{Deserialize, Serialize};
use tableau_core::compositor::{apply_generation_result, apply_region_result, build_generation_input, FeedFrames};
use tableau_core::layout::{apply_assignment, auto_layout, move_feed, scale_feed};
use tableau_core::orchestrator::{
    outline_bbox, BackendError, EditKind, JobId, JobRecord, JobRegistry, JobStatus, PlanConfig, PlanError,
};
use tableau_core::prompt::{base_prompt, ExpandedPrompt, PromptStudio};
use tableau_core::raster::{self, Letterbox, Raster, RasterDigest};
use tableau_core::scene::{Canvas, FeedId, FeedPlacement, ForegroundObject, Mode, NormPoint, NormRect, Scene, SceneDoc};
use tableau_core::segmentation::{extract_foreground, segment_objects, ObjectFilter, SegmentationBackend};
use uuid::Uuid;

use crate::backends::Backends;
use crate::command::{Command, CommandAck, CommandEnvelope};
use crate::error::SessionError;
use crate::frames::{FrameStore, Participant, ParticipantView};
use crate::history::{now_ms, HistoryEntry};
use crate::store::SharedStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub Uuid);

impl SessionId {
    pub fn new() -> Self {
        Self(Uuid::new_v4())
    }
}

impl Default for SessionId {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl FromStr for SessionId {
    type Err = SessionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Uuid::parse_str(s).map(Self).map_err(|_| SessionError::UnknownSession(s.to_owned()))
    }
}

/// Status of a session's generation job as clients see it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub job_id: JobId,
    pub status: JobStatus,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// History entry appended on completion.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entry: Option<usize>,
}

/// Default rect for the `index`-th of `count` feeds: tiled left to right
/// across the middle of the canvas at a 4:3 pixel aspect.
pub fn tile_rect(index: usize, count: usize, canvas: &Canvas) -> NormRect {
    let n = count.max(1) as f64;
    let cx = 0.1 + 0.8 * (index as f64 + 0.5) / n;
    let w = (0.8 / n * 0.9).min(0.35);
    let (cw, ch) = canvas.render_dims();
    let h = w * cw as f64 / ch as f64 * 0.75;
    NormRect::new(cx, 0.5, w, h)
}

/// An uploaded prior decoded, letterboxed to the canvas and segmented.
#[derive(Clone, Debug)]
pub struct PreparedPrior {
    pub image: Arc<RgbaImage>,
    pub source_dims: (u32, u32),
    pub letterbox: Letterbox,
    pub foreground: Vec<ForegroundObject>,
}

pub fn decode_base64_image(data: &str) -> Result<Vec<u8>, SessionError> {
    let data = match data.split_once(";base64,") {
        Some((prefix, rest)) if prefix.starts_with("data:") => rest,
        _ => data,
    };
    B64.decode(data.trim()).map_err(|e| SessionError::Decode(format!("invalid base64: {e}")))
}

/// Segments an environment into foreground objects. Segmentation failures
/// yield no objects rather than failing the caller.
pub fn segment_environment(
    env: &RgbaImage,
    filter: &ObjectFilter,
    segmenter: &dyn SegmentationBackend,
) -> Vec<ForegroundObject> {
    let rgb = raster::rgba_to_rgb(env);
    match segment_objects(&rgb, filter, segmenter) {
        Ok(seg) => extract_foreground(&rgb, &seg),
        Err(err) => {
            tracing::warn!(%err, "segmentation failed, scene has no foreground objects");
            Vec::new()
        }
    }
}

pub fn prepare_prior(image_b64: &str, canvas: &Canvas, backends: &Backends) -> Result<PreparedPrior, SessionError> {
    let bytes = decode_base64_image(image_b64)?;
    let img = raster::decode_image(&bytes).map_err(|e| SessionError::Decode(e.to_string()))?;
    let rgba = img.to_rgba8();
    let (w, h) = canvas.render_dims();
    let (boxed, letterbox) = raster::letterbox(&rgba, w, h);
    let foreground = segment_environment(&boxed, &backends.filter, backends.segmenter.as_ref());
    Ok(PreparedPrior { image: Arc::new(boxed), source_dims: rgba.dimensions(), letterbox, foreground })
}

#[derive(Clone, Debug)]
enum TaskKind {
    Full,
    Region { outline: Vec<NormPoint>, phrase: String, kind: EditKind },
}

/// Everything a generation needs, detached from the writer.
pub struct GenerationTask {
    pub job_id: JobId,
    kind: TaskKind,
    scene: Scene,
    frames: FeedFrames,
    prompts: Arc<PromptStudio>,
    plan: PlanConfig,
    segmenter: Arc<dyn SegmentationBackend>,
    filter: ObjectFilter,
    registry: JobRegistry,
    timeout: Duration,
}

#[derive(Clone, Debug)]
pub struct GenerationOutcome {
    pub job: JobRecord,
    pub prompt: Option<ExpandedPrompt>,
    pub result: Arc<RgbImage>,
    pub init: RgbImage,
    pub mask: Option<GrayImage>,
    pub environment: Arc<RgbaImage>,
    pub foreground: Vec<ForegroundObject>,
    pub region: Option<NormRect>,
}

impl GenerationTask {
    /// Expands the prompt, plans and submits the job, waits for it, and
    /// segments the new environment.
    pub fn run(self) -> Result<GenerationOutcome, SessionError> {
        let (mut job, prompt) = match &self.kind {
            TaskKind::Full => {
                let prompt = self.prompts.expand(&self.scene.activity_prompt, &self.scene.theme_prompt)?;
                let input = build_generation_input(&self.scene, &self.frames)?;
                let job = match self.scene.mode {
                    Mode::WebcamInpaint => self.plan.plan_inpaint_job(&self.scene, &input, &prompt)?,
                    Mode::CanvasImg2Img => self.plan.plan_img2img_job(&self.scene, &input.init, &prompt)?,
                };
                (job, Some(prompt))
            }
            TaskKind::Region { outline, phrase, kind } => {
                (self.plan.plan_region_edit(&self.scene, outline, phrase, *kind)?, None)
            }
        };
        job.job_id = self.job_id;
        let record = job.record();
        let region = job.region.as_ref().map(|r| r.bbox);
        let (init, mask) = (job.init_image.clone(), job.mask.clone());

        let id = self.registry.submit(job);
        let snap = self.registry.wait(id, self.timeout).ok_or(SessionError::Timeout)?;
        let result = match snap.status {
            JobStatus::Done => snap.result.expect("done jobs carry a result"),
            JobStatus::Failed | JobStatus::Cancelled => {
                return Err(snap.error.unwrap_or(BackendError::Cancelled).into());
            }
            JobStatus::Queued | JobStatus::Running => {
                self.registry.cancel(id);
                return Err(SessionError::Timeout);
            }
        };

        let applied = match &region {
            Some(bbox) => apply_region_result(&self.scene, &result, bbox)?,
            None => apply_generation_result(&self.scene, &result)?,
        };
        let environment = applied.environment.expect("applying a result sets the environment");
        let foreground = segment_environment(&environment, &self.filter, self.segmenter.as_ref());
        Ok(GenerationOutcome { job: record, prompt, result, init, mask, environment, foreground, region })
    }
}

/// Who and what produced a history entry.
#[derive(Clone, Debug, Default)]
struct CommandSource {
    command: Option<serde_json::Value>,
    issuer: Option<String>,
    command_id: Option<String>,
}

impl From<&CommandEnvelope> for CommandSource {
    fn from(e: &CommandEnvelope) -> Self {
        Self { command: Some(e.command.recorded()), issuer: e.issuer.clone(), command_id: e.command_id.clone() }
    }
}

struct Active {
    job_id: JobId,
    envelope: CommandEnvelope,
}

/// Session parts persisted alongside history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: SessionId,
    pub canvas: Canvas,
    pub next_feed: u32,
    /// Feeds placed by hand or by auto-layout; they are not re-tiled.
    pub moved: BTreeSet<FeedId>,
}

pub struct SessionState {
    meta: SessionMeta,
    scene: Scene,
    history: Vec<Arc<HistoryEntry>>,
    store: SharedStore,
    frames: FrameStore,
    backends: Backends,
    registry: JobRegistry,
    active: Option<Active>,
    jobs: BTreeMap<JobId, JobView>,
    last_job: Option<JobId>,
}

impl SessionState {
    pub fn new(session_id: SessionId, canvas: Canvas, backends: Backends) -> Result<Self, SessionError> {
        if let Some(v) = canvas.violations().first() {
            return Err(SessionError::InvalidCommand(format!("canvas {}: {}", v.field, v.rule)));
        }
        let scene = Scene::new(canvas);
        let store = SharedStore::new();
        let doc = store.write(|s| scene.to_doc(s))?;
        let entry = HistoryEntry {
            index: 0,
            timestamp_ms: now_ms(),
            label: Some("session created".into()),
            command: None,
            issuer: None,
            scene_digest: doc.digest(),
            scene: doc,
            job: None,
            result_digest: None,
            restored_from: None,
            origin: 0,
        };
        Ok(Self {
            meta: SessionMeta { session_id, canvas, next_feed: 0, moved: BTreeSet::new() },
            scene,
            history: vec![Arc::new(entry)],
            store,
            frames: FrameStore::new(),
            registry: JobRegistry::new(backends.generation.clone()),
            backends,
            active: None,
            jobs: BTreeMap::new(),
            last_job: None,
        })
    }

    /// Rebuilds a session from verified history. The current scene is the
    /// last entry's.
    pub fn restore(
        meta: SessionMeta,
        history: Vec<HistoryEntry>,
        store: SharedStore,
        frames: FrameStore,
        backends: Backends,
    ) -> Result<Self, SessionError> {
        let last = history.last().ok_or_else(|| SessionError::Io("bundle has no history".into()))?;
        let scene = store.read(|s| Scene::from_doc(&last.scene, s))?;
        Ok(Self {
            meta,
            scene,
            history: history.into_iter().map(Arc::new).collect(),
            store,
            frames,
            registry: JobRegistry::new(backends.generation.clone()),
            backends,
            active: None,
            jobs: BTreeMap::new(),
            last_job: None,
        })
    }

    pub fn id(&self) -> SessionId {
        self.meta.session_id
    }

    pub fn meta(&self) -> &SessionMeta {
        &self.meta
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn revision(&self) -> usize {
        self.history.len() - 1
    }

    pub fn history(&self) -> &[Arc<HistoryEntry>] {
        &self.history
    }

    pub fn store(&self) -> &SharedStore {
        &self.store
    }

    pub fn frames(&self) -> &FrameStore {
        &self.frames
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn participants(&self) -> Vec<ParticipantView> {
        self.frames.views()
    }

    pub fn active_job(&self) -> Option<&JobView> {
        self.active.as_ref().and_then(|a| self.jobs.get(&a.job_id))
    }

    pub fn last_job(&self) -> Option<&JobView> {
        self.last_job.as_ref().and_then(|id| self.jobs.get(id))
    }

    pub fn job(&self, id: &JobId) -> Option<&JobView> {
        self.jobs.get(id)
    }

    pub fn jobs(&self) -> &BTreeMap<JobId, JobView> {
        &self.jobs
    }

    fn doc_of(&self, scene: &Scene) -> Result<SceneDoc, SessionError> {
        Ok(self.store.write(|s| scene.to_doc(s))?)
    }

    /// Appends a history entry for `next` unless nothing changed and
    /// `force` is unset.
    #[allow(clippy::too_many_arguments)]
    fn commit(
        &mut self,
        next: Scene,
        label: String,
        source: CommandSource,
        job: Option<JobRecord>,
        result_digest: Option<RasterDigest>,
        restored_from: Option<usize>,
        force: bool,
    ) -> Result<CommandAck, SessionError> {
        let doc = self.doc_of(&next)?;
        let prev = &self.history.last().expect("history is never empty").scene;
        let changed: Vec<String> = prev.changed_fields(&doc).into_iter().map(str::to_owned).collect();
        let command_id = source.command_id.clone();
        if changed.is_empty() && !force {
            return Ok(CommandAck {
                revision: self.revision(),
                appended: false,
                changed_fields: changed,
                job_id: None,
                command_id,
            });
        }
        let index = self.history.len();
        let origin = restored_from.map(|i| self.history[i].origin).unwrap_or(index);
        self.history.push(Arc::new(HistoryEntry {
            index,
            timestamp_ms: now_ms(),
            label: Some(label),
            command: source.command,
            issuer: source.issuer,
            scene_digest: doc.digest(),
            scene: doc,
            job,
            result_digest,
            restored_from,
            origin,
        }));
        self.scene = next;
        Ok(CommandAck { revision: index, appended: true, changed_fields: changed, job_id: None, command_id })
    }

    /// Adds a participant with a tiled default placement.
    pub fn join(&mut self, display_name: &str) -> Result<(FeedId, CommandAck), SessionError> {
        let feed_id = FeedId::from(format!("feed-{}", self.meta.next_feed));
        let mut next = self.scene.clone();
        let z = next.next_z_rank();
        next.feeds.push(FeedPlacement::new(feed_id.clone(), NormRect::new(0.5, 0.5, 0.1, 0.1), z));
        let count = next.feeds.len();
        for (i, feed) in next.feeds.iter_mut().enumerate() {
            if !self.meta.moved.contains(&feed.feed_id) {
                feed.rect = tile_rect(i, count, &self.meta.canvas);
            }
        }
        self.meta.next_feed += 1;
        self.frames.register(feed_id.clone(), Participant::new(display_name));
        let source = CommandSource {
            command: Some(serde_json::json!({"type": "join", "display_name": display_name, "feed_id": feed_id})),
            issuer: Some(display_name.to_owned()),
            command_id: None,
        };
        let ack = self.commit(next, format!("{display_name} joined as {feed_id}"), source, None, None, None, true)?;
        Ok((feed_id, ack))
    }

    fn feed_scene(&self, feed_id: &FeedId) -> Result<Scene, SessionError> {
        if self.scene.feed(feed_id).is_none() {
            return Err(SessionError::UnknownFeed(feed_id.clone()));
        }
        Ok(self.scene.clone())
    }

    fn restore_entry(&mut self, index: usize, label: String, envelope: &CommandEnvelope) -> Result<CommandAck, SessionError> {
        let len = self.history.len();
        let entry = self.history.get(index).ok_or(SessionError::HistoryIndex { index, len })?.clone();
        let scene = self.store.read(|s| Scene::from_doc(&entry.scene, s))?;
        self.commit(scene, label, envelope.into(), None, None, Some(index), true)
    }

    /// Applies a command. Generate-class commands return a task to run off
    /// the writer; the scene changes when it finishes.
    pub fn apply(&mut self, envelope: CommandEnvelope) -> Result<(CommandAck, Option<GenerationTask>), SessionError> {
        if let Command::UploadPrior { image } = &envelope.command {
            let prepared = prepare_prior(image, &self.meta.canvas, &self.backends)?;
            return Ok((self.apply_prior(&envelope, prepared)?, None));
        }
        if envelope.command.is_generate() {
            let task = self.prepare_generation(&envelope)?;
            let ack = CommandAck {
                revision: self.revision(),
                appended: false,
                changed_fields: Vec::new(),
                job_id: Some(task.job_id),
                command_id: envelope.command_id.clone(),
            };
            return Ok((ack, Some(task)));
        }

        let unit = |v: f64, what: &str| {
            if (0.0..=1.0).contains(&v) {
                Ok(v)
            } else {
                Err(SessionError::InvalidCommand(format!("{what} must lie in [0,1], got {v}")))
            }
        };
        let (next, label) = match &envelope.command {
            Command::SetPrompts { activity, theme } => {
                let mut next = self.scene.clone();
                next.activity_prompt = activity.clone();
                next.theme_prompt = theme.clone();
                (next, format!("prompts: {activity:?} / {theme:?}"))
            }
            Command::SetPromptStrength { strength } => {
                let mut next = self.scene.clone();
                next.prompt_strength = unit(*strength, "prompt strength")?;
                (next, format!("prompt strength {strength}"))
            }
            Command::SetPreservation { feed_id, preservation } => {
                let mut next = self.feed_scene(feed_id)?;
                let p = unit(*preservation, "preservation")?;
                next.feed_mut(feed_id).expect("checked").preservation = p;
                (next, format!("{feed_id} preservation {p}"))
            }
            Command::Move { feed_id, cx, cy } => {
                if !cx.is_finite() || !cy.is_finite() {
                    return Err(SessionError::InvalidCommand("move target must be finite".into()));
                }
                let next = move_feed(&self.scene, feed_id, NormPoint::new(*cx, *cy))?;
                self.meta.moved.insert(feed_id.clone());
                (next, format!("move {feed_id}"))
            }
            Command::Scale { feed_id, factor } => {
                let next = scale_feed(&self.scene, feed_id, *factor)?;
                self.meta.moved.insert(feed_id.clone());
                (next, format!("scale {feed_id} by {factor}"))
            }
            Command::SetMode { mode } => {
                let mut next = self.scene.clone();
                next.mode = *mode;
                (next, format!("mode {mode:?}"))
            }
            Command::AutoLayout => {
                let assignment = auto_layout(&self.scene)?;
                let next = apply_assignment(&self.scene, &assignment)?;
                for pair in &assignment.pairs {
                    self.meta.moved.insert(pair.feed_id.clone());
                }
                (next, format!("auto-layout seated {} feed(s)", assignment.pairs.len()))
            }
            Command::Undo => {
                let origin = self.history.last().expect("history is never empty").origin;
                if origin == 0 {
                    return Err(SessionError::NothingToUndo);
                }
                let ack = self.restore_entry(origin - 1, format!("undo to {}", origin - 1), &envelope)?;
                return Ok((ack, None));
            }
            Command::LoadHistory { index } => {
                let ack = self.restore_entry(*index, format!("load history {index}"), &envelope)?;
                return Ok((ack, None));
            }
            Command::FreezeToggle { feed_id } => {
                let mut next = self.feed_scene(feed_id)?;
                let feed = next.feed_mut(feed_id).expect("checked");
                feed.live = !feed.live;
                let label = format!("{feed_id} {}", if feed.live { "live" } else { "frozen" });
                (next, label)
            }
            Command::SetSeed { seed } => {
                let mut next = self.scene.clone();
                next.seed = *seed;
                (next, format!("seed {seed:?}"))
            }
            Command::UploadPrior { .. } | Command::Generate | Command::RegionEdit { .. } => unreachable!("handled above"),
        };
        Ok((self.commit(next, label, (&envelope).into(), None, None, None, false)?, None))
    }

    /// Installs a prepared prior as the environment.
    pub fn apply_prior(&mut self, envelope: &CommandEnvelope, prior: PreparedPrior) -> Result<CommandAck, SessionError> {
        let (w, h) = self.meta.canvas.render_dims();
        if prior.image.dimensions() != (w, h) {
            return Err(SessionError::InvalidCommand("prior was prepared for a different canvas".into()));
        }
        let mut next = self.scene.clone();
        next.environment = Some(prior.image.clone());
        next.foreground = prior.foreground;
        let (sw, sh) = prior.source_dims;
        let lb = prior.letterbox;
        let label = if (sw, sh) == (w, h) {
            format!("upload prior {sw}x{sh}")
        } else {
            format!("upload prior {sw}x{sh} letterboxed to {w}x{h} at {},{} size {}x{}", lb.x, lb.y, lb.width, lb.height)
        };
        self.commit(next, label, envelope.into(), None, None, None, true)
    }

    fn busy(&self) -> bool {
        self.active.is_some()
    }

    /// Validates a Generate-class command and detaches its work.
    pub fn prepare_generation(&mut self, envelope: &CommandEnvelope) -> Result<GenerationTask, SessionError> {
        if let Some(active) = &self.active {
            return Err(SessionError::CommandRejected(format!("generation {} is in progress", active.job_id)));
        }
        let kind = match &envelope.command {
            Command::Generate => {
                base_prompt(&self.scene.activity_prompt, &self.scene.theme_prompt)?;
                TaskKind::Full
            }
            Command::RegionEdit { outline, phrase, kind } => {
                if outline_bbox(outline).is_none() {
                    return Err(PlanError::DegenerateOutline.into());
                }
                if self.scene.environment.is_none() {
                    return Err(PlanError::NoEnvironment.into());
                }
                if *kind == EditKind::Add && phrase.trim().is_empty() {
                    return Err(SessionError::InvalidCommand("adding an object needs a phrase".into()));
                }
                TaskKind::Region { outline: outline.clone(), phrase: phrase.clone(), kind: *kind }
            }
            other => return Err(SessionError::InvalidCommand(format!("{} does not generate", other.name()))),
        };

        let frames = self.frames.frozen_frames();
        let mut scene = self.scene.clone();
        scene.feeds.retain(|f| frames.contains_key(&f.feed_id));
        if matches!(kind, TaskKind::Full) && scene.feeds.is_empty() {
            match (scene.mode, &scene.environment) {
                (Mode::CanvasImg2Img, Some(_)) => {}
                _ => {
                    return Err(SessionError::CommandRejected(
                        "no participant has sent a frame and there is no environment to restyle".into(),
                    ))
                }
            }
        }

        let job_id = JobId::new();
        self.active = Some(Active { job_id, envelope: envelope.clone() });
        self.last_job = Some(job_id);
        self.jobs.insert(
            job_id,
            JobView { job_id, status: JobStatus::Running, command: envelope.command.name().into(), error: None, entry: None },
        );
        Ok(GenerationTask {
            job_id,
            kind,
            scene,
            frames,
            prompts: self.backends.prompts.clone(),
            plan: self.backends.plan.clone(),
            segmenter: self.backends.segmenter.clone(),
            filter: self.backends.filter.clone(),
            registry: self.registry.clone(),
            timeout: self.backends.generation_timeout,
        })
    }

    /// Applies a finished generation to the current scene. Edits made
    /// while it ran are kept; only the environment and foreground change.
    pub fn finish_generation(
        &mut self,
        job_id: JobId,
        outcome: Result<GenerationOutcome, SessionError>,
    ) -> Result<CommandAck, SessionError> {
        let active = match self.active.take() {
            Some(a) if a.job_id == job_id => a,
            other => {
                self.active = other;
                return Err(SessionError::UnknownJob(job_id.to_string()));
            }
        };
        let outcome = match outcome {
            Ok(o) => o,
            Err(err) => {
                if let Some(view) = self.jobs.get_mut(&job_id) {
                    view.status = match err {
                        SessionError::Generation(BackendError::Cancelled) => JobStatus::Cancelled,
                        _ => JobStatus::Failed,
                    };
                    view.error = Some(err.to_string());
                }
                return Err(err);
            }
        };
        let mut next = self.scene.clone();
        next.environment = Some(outcome.environment.clone());
        next.foreground = outcome.foreground;
        self.store.put(&Raster::Rgba(raster::rgb_to_rgba(&outcome.init)));
        if let Some(mask) = &outcome.mask {
            self.store.put(&Raster::Gray(mask.clone()));
        }
        let result_digest = self.store.put(&Raster::Rgba(raster::rgb_to_rgba(&outcome.result)));
        let label = match (&outcome.job.region, &outcome.prompt) {
            (Some(r), _) => match r.kind {
                EditKind::Add => format!("region edit: add {:?}", r.phrase),
                EditKind::Remove => "region edit: remove".to_owned(),
            },
            (None, Some(p)) => format!("generate: {}", p.assembled),
            (None, None) => "generate".to_owned(),
        };
        let mut ack = self.commit(next, label, (&active.envelope).into(), Some(outcome.job), Some(result_digest), None, true)?;
        ack.job_id = Some(job_id);
        if let Some(view) = self.jobs.get_mut(&job_id) {
            view.status = JobStatus::Done;
            view.entry = Some(ack.revision);
        }
        Ok(ack)
    }

    /// Applies a command and, for generation, runs it to completion on the
    /// calling thread.
    pub fn apply_blocking(&mut self, envelope: CommandEnvelope) -> Result<CommandAck, SessionError> {
        let (ack, task) = self.apply(envelope)?;
        match task {
            Some(task) => {
                let id = task.job_id;
                let outcome = task.run();
                self.finish_generation(id, outcome)
            }
            None => Ok(ack),
        }
    }

    pub fn is_busy(&self) -> bool {
        self.busy()
    }
}
