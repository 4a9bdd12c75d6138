//! Generation jobs: planning from a scene, the backend abstraction, a
//! per-session job registry, the deterministic mock backend and the
//! WebUI-compatible HTTP adapter.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;
use uuid::Uuid;

use crate::compositor::{GenerationInput, MASK_GENERATE, MASK_PRESERVE};
use crate::http::{self, HttpError};
use crate::prompt::ExpandedPrompt;
use crate::raster::{self, digest_gray, RasterDigest};
use crate::scene::{NormPoint, NormRect, Scene, Seed};
use crate::segmentation::fill_rect_mask;

pub const CFG_SCALE: f64 = 7.0;
pub const DEFAULT_NEGATIVE_PROMPT: &str = "people, humans, faces, text, watermark";
pub const DENOISE_MIN: f64 = 0.3;
pub const DENOISE_MAX: f64 = 0.9;
/// Smallest region-edit bbox, as a fraction of the canvas area.
pub const MIN_REGION_AREA: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(pub Uuid);

impl JobId {
    pub fn new() -> Self {
        Self(Uuid::new_v4())
    }
}

impl Default for JobId {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl FromStr for JobId {
    type Err = uuid::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Uuid::parse_str(s).map(JobId)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobMode {
    Inpaint,
    #[serde(rename = "img2img")]
    Img2Img,
    RegionEdit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    InpaintControl,
    Depth,
    Canny,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlInput {
    #[default]
    InitImage,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlUnit {
    pub kind: ControlKind,
    pub weight: f64,
    #[serde(default)]
    pub input: ControlInput,
}

impl ControlUnit {
    pub fn new(kind: ControlKind) -> Self {
        Self { kind, weight: 1.0, input: ControlInput::InitImage }
    }

    pub fn with_weight(kind: ControlKind, weight: f64) -> Self {
        Self { weight, ..Self::new(kind) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Add,
    Remove,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub phrase: String,
    pub bbox: NormRect,
    pub kind: EditKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
    Cancelled,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed | JobStatus::Cancelled)
    }
}

/// A fully resolved backend request.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationJob {
    pub job_id: JobId,
    pub mode: JobMode,
    pub init_image: RgbImage,
    /// 255 = generate, 0 = keep. Absent for img2img.
    pub mask: Option<GrayImage>,
    pub prompt: String,
    pub negative_prompt: String,
    pub denoising_strength: f64,
    pub cfg_scale: f64,
    pub seed: u64,
    pub control_units: Vec<ControlUnit>,
    pub region: Option<RegionSpec>,
}

impl GenerationJob {
    /// Inpainting of a person-shaped hole in one webcam frame.
    pub fn occlusion_fill(init: RgbImage, mask: GrayImage, prompt: &str, negative_prompt: &str) -> Self {
        Self {
            job_id: JobId::new(),
            mode: JobMode::Inpaint,
            init_image: init,
            mask: Some(mask),
            prompt: prompt.to_owned(),
            negative_prompt: negative_prompt.to_owned(),
            denoising_strength: 1.0,
            cfg_scale: CFG_SCALE,
            seed: 0,
            control_units: vec![ControlUnit::new(ControlKind::InpaintControl)],
            region: None,
        }
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.init_image.dimensions()
    }

    /// Serializable summary with rasters replaced by digests.
    pub fn record(&self) -> JobRecord {
        JobRecord {
            job_id: self.job_id,
            mode: self.mode,
            width: self.init_image.width(),
            height: self.init_image.height(),
            init_digest: raster::digest_rgba(&raster::rgb_to_rgba(&self.init_image)),
            mask_digest: self.mask.as_ref().map(digest_gray),
            prompt: self.prompt.clone(),
            negative_prompt: self.negative_prompt.clone(),
            denoising_strength: self.denoising_strength,
            cfg_scale: self.cfg_scale,
            seed: self.seed,
            control_units: self.control_units.clone(),
            region: self.region.clone(),
        }
    }

    /// Structural invariants of the job; empty when well-formed.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let kinds: Vec<ControlKind> = self.control_units.iter().map(|u| u.kind).collect();
        match self.mode {
            JobMode::Inpaint => {
                if kinds != [ControlKind::InpaintControl] {
                    out.push("inpaint jobs carry exactly one InpaintControl unit".into());
                }
                if self.mask.is_none() {
                    out.push("inpaint jobs carry a mask".into());
                }
            }
            JobMode::Img2Img => {
                if kinds != [ControlKind::Depth, ControlKind::Canny] {
                    out.push("img2img jobs carry exactly Depth and Canny units".into());
                }
                if self.mask.is_some() {
                    out.push("img2img jobs carry no mask".into());
                }
            }
            JobMode::RegionEdit => match (&self.region, &self.mask) {
                (Some(region), Some(mask)) => {
                    let (w, h) = mask.dimensions();
                    if *mask != fill_rect_mask(w, h, &region.bbox) {
                        out.push("region-edit mask equals the rasterized bbox".into());
                    }
                }
                _ => out.push("region-edit jobs carry a region and a mask".into()),
            },
        }
        if let Some(mask) = &self.mask {
            if mask.dimensions() != self.init_image.dimensions() {
                out.push("mask and init image share dimensions".into());
            }
        }
        if !(0.0..=1.0).contains(&self.denoising_strength) {
            out.push("denoising_strength in [0,1]".into());
        }
        if self.control_units.iter().any(|u| !(0.0..=2.0).contains(&u.weight)) {
            out.push("control weight in [0,2]".into());
        }
        out
    }
}

/// What history keeps of a job. Raster fields are digests of the stored
/// RGBA init image and gray mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: JobId,
    pub mode: JobMode,
    pub width: u32,
    pub height: u32,
    pub init_digest: RasterDigest,
    pub mask_digest: Option<RasterDigest>,
    pub prompt: String,
    pub negative_prompt: String,
    pub denoising_strength: f64,
    pub cfg_scale: f64,
    pub seed: u64,
    pub control_units: Vec<ControlUnit>,
    pub region: Option<RegionSpec>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("mask has no pixels to generate")]
    NothingToGenerate,
    #[error("image is {found:?}, generation size is {expected:?}")]
    DimensionMismatch { expected: (u32, u32), found: (u32, u32) },
    #[error("region outline is degenerate")]
    DegenerateOutline,
    #[error("scene has no environment image")]
    NoEnvironment,
}

/// Tunables applied by the planners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    pub cfg_scale: f64,
    pub negative_prompt: String,
    pub denoise_min: f64,
    pub denoise_max: f64,
    pub inpaint_control_weight: f64,
    pub depth_weight: f64,
    pub canny_weight: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            cfg_scale: CFG_SCALE,
            negative_prompt: DEFAULT_NEGATIVE_PROMPT.to_owned(),
            denoise_min: DENOISE_MIN,
            denoise_max: DENOISE_MAX,
            inpaint_control_weight: 1.0,
            depth_weight: 1.0,
            canny_weight: 1.0,
        }
    }
}

/// Resolves a scene seed, drawing a fresh one for `Seed::Random`.
pub fn resolve_seed(seed: Seed) -> u64 {
    match seed {
        Seed::Fixed(s) => s,
        Seed::Random => rand::random::<u32>() as u64,
    }
}

fn check_gen_dims(scene: &Scene, found: (u32, u32)) -> Result<(), PlanError> {
    let expected = scene.canvas.gen_dims();
    if found != expected {
        return Err(PlanError::DimensionMismatch { expected, found });
    }
    Ok(())
}

impl PlanConfig {
    /// Affine prompt-strength to denoising mapping.
    pub fn denoising_for(&self, prompt_strength: f64) -> f64 {
        self.denoise_min + (self.denoise_max - self.denoise_min) * prompt_strength.clamp(0.0, 1.0)
    }

    pub fn plan_inpaint_job(
        &self,
        scene: &Scene,
        input: &GenerationInput,
        prompt: &ExpandedPrompt,
    ) -> Result<GenerationJob, PlanError> {
        check_gen_dims(scene, input.init.dimensions())?;
        check_gen_dims(scene, input.mask.dimensions())?;
        if input.mask.pixels().all(|p| p[0] == MASK_PRESERVE) {
            return Err(PlanError::NothingToGenerate);
        }
        Ok(GenerationJob {
            job_id: JobId::new(),
            mode: JobMode::Inpaint,
            init_image: input.init.clone(),
            mask: Some(input.mask.clone()),
            prompt: prompt.assembled.clone(),
            negative_prompt: self.negative_prompt.clone(),
            denoising_strength: 1.0,
            cfg_scale: self.cfg_scale,
            seed: resolve_seed(scene.seed),
            control_units: vec![ControlUnit::with_weight(ControlKind::InpaintControl, self.inpaint_control_weight)],
            region: None,
        })
    }

    pub fn plan_img2img_job(
        &self,
        scene: &Scene,
        prior: &RgbImage,
        prompt: &ExpandedPrompt,
    ) -> Result<GenerationJob, PlanError> {
        check_gen_dims(scene, prior.dimensions())?;
        Ok(GenerationJob {
            job_id: JobId::new(),
            mode: JobMode::Img2Img,
            init_image: prior.clone(),
            mask: None,
            prompt: prompt.assembled.clone(),
            negative_prompt: self.negative_prompt.clone(),
            denoising_strength: self.denoising_for(scene.prompt_strength),
            cfg_scale: self.cfg_scale,
            seed: resolve_seed(scene.seed),
            control_units: vec![
                ControlUnit::with_weight(ControlKind::Depth, self.depth_weight),
                ControlUnit::with_weight(ControlKind::Canny, self.canny_weight),
            ],
            region: None,
        })
    }

    pub fn plan_region_edit(
        &self,
        scene: &Scene,
        outline: &[NormPoint],
        phrase: &str,
        kind: EditKind,
    ) -> Result<GenerationJob, PlanError> {
        let bbox = outline_bbox(outline).ok_or(PlanError::DegenerateOutline)?;
        let env = scene.environment.as_ref().ok_or(PlanError::NoEnvironment)?;
        let (gw, gh) = scene.canvas.gen_dims();
        let init = raster::resize_rgb(&raster::rgba_to_rgb(env), gw, gh);
        let phrase = match kind {
            EditKind::Add => phrase.trim().to_owned(),
            EditKind::Remove => String::new(),
        };
        Ok(GenerationJob {
            job_id: JobId::new(),
            mode: JobMode::RegionEdit,
            init_image: init,
            mask: Some(fill_rect_mask(gw, gh, &bbox)),
            prompt: phrase.clone(),
            negative_prompt: self.negative_prompt.clone(),
            denoising_strength: 1.0,
            cfg_scale: self.cfg_scale,
            seed: resolve_seed(scene.seed),
            control_units: Vec::new(),
            region: Some(RegionSpec { phrase, bbox, kind }),
        })
    }
}

/// Axis-aligned bounding box of an outline, clamped to the canvas. `None`
/// for fewer than three points or a box under [`MIN_REGION_AREA`].
pub fn outline_bbox(outline: &[NormPoint]) -> Option<NormRect> {
    if outline.len() < 3 || outline.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return None;
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in outline {
        let (x, y) = (p.x.clamp(0.0, 1.0), p.y.clamp(0.0, 1.0));
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let bbox = NormRect::from_edges(x0, y0, x1, y1);
    (bbox.area() >= MIN_REGION_AREA).then_some(bbox)
}

pub fn plan_inpaint_job(
    scene: &Scene,
    input: &GenerationInput,
    prompt: &ExpandedPrompt,
) -> Result<GenerationJob, PlanError> {
    PlanConfig::default().plan_inpaint_job(scene, input, prompt)
}

pub fn plan_img2img_job(scene: &Scene, prior: &RgbImage, prompt: &ExpandedPrompt) -> Result<GenerationJob, PlanError> {
    PlanConfig::default().plan_img2img_job(scene, prior, prompt)
}

pub fn plan_region_edit(
    scene: &Scene,
    outline: &[NormPoint],
    phrase: &str,
    kind: EditKind,
) -> Result<GenerationJob, PlanError> {
    PlanConfig::default().plan_region_edit(scene, outline, phrase, kind)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unreachable after {attempts} attempts: {detail}")]
    Unreachable { attempts: u32, detail: String },
    #[error("backend rejected the request: {0}")]
    Rejected(String),
    #[error("job cancelled")]
    Cancelled,
    #[error("backend returned {found:?}, expected {expected:?}")]
    DimensionMismatch { expected: (u32, u32), found: (u32, u32) },
}

/// Blocking generation backend.
pub trait GenerationBackend: Send + Sync {
    fn generate(&self, job: &GenerationJob) -> Result<RgbImage, BackendError>;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sixty-four bits of the SHA-256 over prompt, seed and mask.
fn mock_key(job: &GenerationJob) -> u64 {
    let mut h = Sha256::new();
    h.update(Sha256::digest(job.prompt.as_bytes()));
    h.update(job.seed.to_le_bytes());
    match &job.mask {
        Some(mask) => h.update(digest_gray(mask).as_str().as_bytes()),
        None => h.update(b"no-mask"),
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 is 32 bytes"))
}

/// The seeded pattern value of one pixel.
pub fn mock_pattern(key: u64, index: u64) -> Rgb<u8> {
    let v = splitmix64(key ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    Rgb([v as u8, (v >> 8) as u8, (v >> 16) as u8])
}

/// Deterministic stand-in for a diffusion backend.
///
/// Pixels where the mask is 0 are copied from the init image. Every other
/// pixel takes a pattern keyed by prompt, seed and mask. When Depth or Canny
/// units are present, the pattern is scaled by the init pixel's luminance
/// and mixed with the init pixel by the denoising strength, so
/// `out = (1 - d) * init + d * pattern * L / 255`.
pub fn mock_generate(job: &GenerationJob) -> RgbImage {
    let key = mock_key(job);
    let structural = job.control_units.iter().any(|u| matches!(u.kind, ControlKind::Depth | ControlKind::Canny));
    let d = job.denoising_strength.clamp(0.0, 1.0);
    let (w, h) = job.init_image.dimensions();
    RgbImage::from_fn(w, h, |x, y| {
        let init = *job.init_image.get_pixel(x, y);
        if let Some(mask) = &job.mask {
            if mask.get_pixel(x, y)[0] == MASK_PRESERVE {
                return init;
            }
        }
        let pattern = mock_pattern(key, y as u64 * w as u64 + x as u64);
        if !structural {
            return pattern;
        }
        let l = raster::luminance(init) as f64 / 255.0;
        let mix = |i: usize| ((1.0 - d) * init[i] as f64 + d * pattern[i] as f64 * l).round().clamp(0.0, 255.0) as u8;
        Rgb([mix(0), mix(1), mix(2)])
    })
}

/// In-process mock backend, optionally slowed down to exercise
/// cancellation.
#[derive(Clone, Debug, Default)]
pub struct MockBackend {
    pub delay: Duration,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_delay(delay: Duration) -> Self {
        Self { delay }
    }
}

impl GenerationBackend for MockBackend {
    fn generate(&self, job: &GenerationJob) -> Result<RgbImage, BackendError> {
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        Ok(mock_generate(job))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlModels {
    pub inpaint_module: String,
    pub inpaint_model: String,
    pub depth_module: String,
    pub depth_model: String,
    pub canny_module: String,
    pub canny_model: String,
}

impl Default for ControlModels {
    fn default() -> Self {
        Self {
            inpaint_module: "inpaint_only".into(),
            inpaint_model: "control_v11p_sd15_inpaint".into(),
            depth_module: "depth_midas".into(),
            depth_model: "control_v11f1p_sd15_depth".into(),
            canny_module: "canny".into(),
            canny_model: "control_v11p_sd15_canny".into(),
        }
    }
}

impl ControlModels {
    fn for_kind(&self, kind: ControlKind) -> (&str, &str) {
        match kind {
            ControlKind::InpaintControl => (&self.inpaint_module, &self.inpaint_model),
            ControlKind::Depth => (&self.depth_module, &self.depth_model),
            ControlKind::Canny => (&self.canny_module, &self.canny_model),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendProfile {
    pub base_url: String,
    pub model_checkpoint_inpaint: String,
    pub model_checkpoint_base: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub steps: u32,
    pub sampler_name: String,
    pub control_models: ControlModels,
}

impl Default for BackendProfile {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:7860".into(),
            model_checkpoint_inpaint: "Realistic_Vision_V2.0-inpainting".into(),
            model_checkpoint_base: "Realistic_Vision_V2.0".into(),
            timeout_s: 180.0,
            max_retries: 2,
            steps: 30,
            sampler_name: "DPM++ 2M Karras".into(),
            control_models: ControlModels::default(),
        }
    }
}

impl BackendProfile {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self { base_url: base_url.into(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout_s > 0.0) {
            return Err("timeout_s must be positive".into());
        }
        Ok(())
    }

    pub fn checkpoint_for(&self, mode: JobMode) -> &str {
        match mode {
            JobMode::Inpaint | JobMode::RegionEdit => &self.model_checkpoint_inpaint,
            JobMode::Img2Img => &self.model_checkpoint_base,
        }
    }
}

/// Path of the img2img endpoint relative to the backend base URL.
pub const IMG2IMG_PATH: &str = "/sdapi/v1/img2img";

/// Version tag of [`ADAPTER_SCHEMA`].
pub const ADAPTER_VERSION: &str = "webui-img2img/1";

/// JSON Schema for request documents produced by [`to_webui_payload`].
pub const ADAPTER_SCHEMA: &str = include_str!("../schema/webui-img2img.v1.json");

fn b64_png_rgb(img: &RgbImage) -> String {
    B64.encode(raster::encode_png_rgb(img))
}

fn b64_png_gray(img: &GrayImage) -> String {
    B64.encode(raster::encode_png_gray(img))
}

/// The request document for one job.
pub fn to_webui_payload(job: &GenerationJob, profile: &BackendProfile) -> Value {
    let (w, h) = job.dimensions();
    let units: Vec<Value> = job
        .control_units
        .iter()
        .map(|u| {
            let (module, model) = profile.control_models.for_kind(u.kind);
            json!({
                "enabled": true,
                "kind": u.kind,
                "module": module,
                "model": model,
                "weight": u.weight,
                "input": "init_image",
            })
        })
        .collect();
    let mut scripts = json!({ "controlnet": { "args": units } });
    if let Some(region) = &job.region {
        let b = region.bbox;
        scripts["gligen"] = json!({
            "args": [{
                "phrases": [region.phrase],
                "boxes": [[b.left().clamp(0.0, 1.0), b.top().clamp(0.0, 1.0), b.right().clamp(0.0, 1.0), b.bottom().clamp(0.0, 1.0)]],
            }]
        });
    }
    let mut meta = json!({ "job_id": job.job_id, "mode": job.mode });
    if let Some(region) = &job.region {
        meta["edit_kind"] = json!(region.kind);
    }
    let mut doc = json!({
        "init_images": [b64_png_rgb(&job.init_image)],
        "prompt": job.prompt,
        "negative_prompt": job.negative_prompt,
        "seed": job.seed,
        "width": w,
        "height": h,
        "denoising_strength": job.denoising_strength,
        "cfg_scale": job.cfg_scale,
        "steps": profile.steps,
        "sampler_name": profile.sampler_name,
        "override_settings": { "sd_model_checkpoint": profile.checkpoint_for(job.mode) },
        "alwayson_scripts": scripts,
        "tableau_job": meta,
    });
    if let Some(mask) = &job.mask {
        doc["mask"] = json!(b64_png_gray(mask));
        doc["inpainting_mask_invert"] = json!(0);
        doc["inpainting_fill"] = json!(1);
        doc["inpaint_full_res"] = json!(false);
        doc["mask_blur"] = json!(0);
    }
    doc
}

fn adapter_validator() -> &'static jsonschema::Validator {
    static VALIDATOR: std::sync::OnceLock<jsonschema::Validator> = std::sync::OnceLock::new();
    VALIDATOR.get_or_init(|| {
        let schema: Value = serde_json::from_str(ADAPTER_SCHEMA).expect("adapter schema is valid JSON");
        jsonschema::validator_for(&schema).expect("adapter schema compiles")
    })
}

/// Checks a request document against [`ADAPTER_SCHEMA`].
pub fn validate_payload(doc: &Value) -> Result<(), Vec<String>> {
    let errors: Vec<String> =
        adapter_validator().iter_errors(doc).map(|e| format!("{}: {}", e.instance_path, e)).collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

#[derive(Deserialize)]
struct PayloadMeta {
    job_id: JobId,
    mode: JobMode,
    edit_kind: Option<EditKind>,
}

#[derive(Deserialize)]
struct PayloadUnit {
    kind: ControlKind,
    weight: f64,
}

#[derive(Deserialize)]
struct PayloadGligen {
    phrases: Vec<String>,
    boxes: Vec<[f64; 4]>,
}

fn rejected(detail: impl fmt::Display) -> BackendError {
    BackendError::Rejected(detail.to_string())
}

fn decode_b64(s: &str) -> Result<Vec<u8>, BackendError> {
    let s = s.split_once(',').filter(|(head, _)| head.starts_with("data:")).map_or(s, |(_, body)| body);
    B64.decode(s).map_err(rejected)
}

/// Rebuilds a job from a request document; the inverse of
/// [`to_webui_payload`]. Used by the mock HTTP backend.
pub fn job_from_payload(doc: &Value) -> Result<GenerationJob, BackendError> {
    validate_payload(doc).map_err(|errs| rejected(errs.join("; ")))?;
    let field = |name: &str| doc.get(name).cloned().unwrap_or(Value::Null);
    let meta: PayloadMeta = serde_json::from_value(field("tableau_job")).map_err(rejected)?;
    let init_b64 = doc["init_images"][0].as_str().unwrap_or_default();
    let init = raster::decode_png_rgb(&decode_b64(init_b64)?).map_err(rejected)?;
    let mask = match doc.get("mask").and_then(Value::as_str) {
        Some(m) => Some(raster::decode_png_gray(&decode_b64(m)?).map_err(rejected)?),
        None => None,
    };
    let (w, h) = (doc["width"].as_u64().unwrap_or(0) as u32, doc["height"].as_u64().unwrap_or(0) as u32);
    if init.dimensions() != (w, h) {
        return Err(rejected(format!("init image is {:?}, request says {:?}", init.dimensions(), (w, h))));
    }
    let units: Vec<PayloadUnit> =
        serde_json::from_value(doc["alwayson_scripts"]["controlnet"]["args"].clone()).map_err(rejected)?;
    let region = match doc["alwayson_scripts"].get("gligen") {
        Some(g) => {
            let mut args: Vec<PayloadGligen> = serde_json::from_value(g["args"].clone()).map_err(rejected)?;
            let g = args.pop().ok_or_else(|| rejected("empty gligen args"))?;
            let [x0, y0, x1, y1] = *g.boxes.first().ok_or_else(|| rejected("no gligen box"))?;
            Some(RegionSpec {
                phrase: g.phrases.into_iter().next().unwrap_or_default(),
                bbox: NormRect::from_edges(x0, y0, x1, y1),
                kind: meta.edit_kind.ok_or_else(|| rejected("region edit without edit_kind"))?,
            })
        }
        None => None,
    };
    Ok(GenerationJob {
        job_id: meta.job_id,
        mode: meta.mode,
        init_image: init,
        mask,
        prompt: doc["prompt"].as_str().unwrap_or_default().to_owned(),
        negative_prompt: doc["negative_prompt"].as_str().unwrap_or_default().to_owned(),
        denoising_strength: doc["denoising_strength"].as_f64().unwrap_or(0.0),
        cfg_scale: doc["cfg_scale"].as_f64().unwrap_or(CFG_SCALE),
        seed: doc["seed"].as_u64().unwrap_or(0),
        control_units: units.into_iter().map(|u| ControlUnit::with_weight(u.kind, u.weight)).collect(),
        region,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WebUiResponse {
    pub images: Vec<String>,
    #[serde(default)]
    pub info: Value,
}

impl WebUiResponse {
    pub fn from_image(img: &RgbImage) -> Self {
        Self { images: vec![b64_png_rgb(img)], info: Value::Null }
    }
}

/// HTTP client for a WebUI-compatible backend. Transport failures are
/// retried up to `max_retries` times; HTTP error statuses are not.
pub struct WebUiClient {
    profile: BackendProfile,
    agent: ureq::Agent,
}

impl WebUiClient {
    pub fn new(profile: BackendProfile) -> Self {
        let agent = http::agent(Duration::from_secs_f64(profile.timeout_s.max(0.001)));
        Self { profile, agent }
    }

    pub fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    pub fn endpoint(&self) -> String {
        format!("{}{}", self.profile.base_url.trim_end_matches('/'), IMG2IMG_PATH)
    }
}

impl GenerationBackend for WebUiClient {
    fn generate(&self, job: &GenerationJob) -> Result<RgbImage, BackendError> {
        let payload = to_webui_payload(job, &self.profile);
        let url = self.endpoint();
        let attempts = self.profile.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match http::post_json::<_, WebUiResponse>(&self.agent, &url, &payload, None) {
                Ok(resp) => {
                    let first = resp.images.first().ok_or_else(|| rejected("response has no images"))?;
                    let img = raster::decode_png_rgb(&decode_b64(first)?).map_err(rejected)?;
                    if img.dimensions() != job.dimensions() {
                        return Err(BackendError::DimensionMismatch {
                            expected: job.dimensions(),
                            found: img.dimensions(),
                        });
                    }
                    return Ok(img);
                }
                Err(HttpError::Transport(detail)) => {
                    tracing::warn!(attempt, %detail, "generation backend transport failure");
                    last = detail;
                }
                Err(other) => return Err(rejected(other)),
            }
        }
        Err(BackendError::Unreachable { attempts, detail: last })
    }
}

/// Point-in-time view of one job.
#[derive(Clone, Debug)]
pub struct JobSnapshot {
    pub job_id: JobId,
    pub status: JobStatus,
    pub result: Option<Arc<RgbImage>>,
    pub error: Option<BackendError>,
    pub job: Arc<GenerationJob>,
}

struct RegistryState {
    jobs: HashMap<JobId, JobSnapshot>,
    current: Option<JobId>,
}

/// Per-session job table. At most one job is in flight: submitting while
/// another is queued or running cancels it, and its eventual result is
/// discarded.
#[derive(Clone)]
pub struct JobRegistry {
    backend: Arc<dyn GenerationBackend>,
    shared: Arc<(Mutex<RegistryState>, Condvar)>,
}

impl JobRegistry {
    pub fn new(backend: Arc<dyn GenerationBackend>) -> Self {
        Self {
            backend,
            shared: Arc::new((Mutex::new(RegistryState { jobs: HashMap::new(), current: None }), Condvar::new())),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, RegistryState> {
        self.shared.0.lock().expect("job registry poisoned")
    }

    pub fn submit(&self, job: GenerationJob) -> JobId {
        let id = job.job_id;
        let job = Arc::new(job);
        {
            let mut state = self.lock();
            if let Some(prev) = state.current.take() {
                if let Some(entry) = state.jobs.get_mut(&prev) {
                    if !entry.status.is_terminal() {
                        entry.status = JobStatus::Cancelled;
                        entry.error = Some(BackendError::Cancelled);
                    }
                }
            }
            state.jobs.insert(
                id,
                JobSnapshot { job_id: id, status: JobStatus::Queued, result: None, error: None, job: job.clone() },
            );
            state.current = Some(id);
        }
        self.shared.1.notify_all();

        let this = self.clone();
        std::thread::spawn(move || this.run(id, job));
        id
    }

    fn run(&self, id: JobId, job: Arc<GenerationJob>) {
        {
            let mut state = self.lock();
            match state.jobs.get_mut(&id) {
                Some(entry) if entry.status == JobStatus::Queued => entry.status = JobStatus::Running,
                _ => return,
            }
        }
        self.shared.1.notify_all();

        let outcome = self.backend.generate(&job).and_then(|img| {
            if img.dimensions() != job.dimensions() {
                Err(BackendError::DimensionMismatch { expected: job.dimensions(), found: img.dimensions() })
            } else {
                Ok(img)
            }
        });

        let mut state = self.lock();
        if let Some(entry) = state.jobs.get_mut(&id) {
            if entry.status == JobStatus::Running {
                match outcome {
                    Ok(img) => {
                        entry.status = JobStatus::Done;
                        entry.result = Some(Arc::new(img));
                    }
                    Err(err) => {
                        entry.status = JobStatus::Failed;
                        entry.error = Some(err);
                    }
                }
            }
        }
        if state.current == Some(id) {
            state.current = None;
        }
        drop(state);
        self.shared.1.notify_all();
    }

    pub fn poll(&self, id: JobId) -> Option<JobSnapshot> {
        self.lock().jobs.get(&id).cloned()
    }

    /// Blocks until the job reaches a terminal status or `timeout` passes.
    pub fn wait(&self, id: JobId, timeout: Duration) -> Option<JobSnapshot> {
        let deadline = Instant::now() + timeout;
        let mut state = self.lock();
        loop {
            let snap = state.jobs.get(&id)?.clone();
            let now = Instant::now();
            if snap.status.is_terminal() || now >= deadline {
                return Some(snap);
            }
            state = self.shared.1.wait_timeout(state, deadline - now).expect("job registry poisoned").0;
        }
    }

    pub fn cancel(&self, id: JobId) -> bool {
        let mut state = self.lock();
        let cancelled = match state.jobs.get_mut(&id) {
            Some(entry) if !entry.status.is_terminal() => {
                entry.status = JobStatus::Cancelled;
                entry.error = Some(BackendError::Cancelled);
                true
            }
            _ => false,
        };
        if cancelled && state.current == Some(id) {
            state.current = None;
        }
        drop(state);
        self.shared.1.notify_all();
        cancelled
    }

    /// The queued or running job, if any.
    pub fn in_flight(&self) -> Option<JobId> {
        let state = self.lock();
        state.current.filter(|id| state.jobs.get(id).is_some_and(|e| !e.status.is_terminal()))
    }
}

/// Binary mask with the generate value where `pred` holds.
pub fn mask_from_fn(w: u32, h: u32, pred: impl Fn(u32, u32) -> bool) -> GrayImage {
    GrayImage::from_fn(w, h, |x, y| Luma([if pred(x, y) { MASK_GENERATE } else { MASK_PRESERVE }]))
}
