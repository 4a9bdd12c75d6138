//! The canonical scene: canvas, participant feed placements, the generated
//! environment and the foreground objects cut from it.
//!
//! A [`Scene`] is a value. Every edit produces a new snapshot; rasters are
//! shared behind `Arc` so snapshots stay cheap to clone. The on-disk form is
//! [`SceneDoc`], a versioned JSON document whose raster fields are relative
//! references to content-addressed PNG files.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use image::{GrayImage, RgbaImage};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::error::RasterError;
use crate::raster::{digest_bytes, Raster, RasterDigest};
use crate::store::{DirRasterStore, RasterStore};

pub const SCENE_SCHEMA_VERSION: u32 = 1;

/// Directory (relative to the document) holding a scene's rasters.
pub const RASTER_DIR: &str = "rasters";

#[derive(Debug, Error)]
pub enum SceneError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("scene schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u32, expected: u32 },
    #[error("raster {digest} should be {expected}")]
    RasterKind { digest: RasterDigest, expected: &'static str },
    #[error("malformed scene document: {0}")]
    Malformed(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Canvas {
    pub width_px: u32,
    pub height_px: u32,
    pub gen_width_px: u32,
    pub gen_height_px: u32,
}

impl Default for Canvas {
    fn default() -> Self {
        Self {
            width_px: 1280,
            height_px: 720,
            gen_width_px: 1024,
            gen_height_px: 576,
        }
    }
}

impl Canvas {
    pub fn render_dims(&self) -> (u32, u32) {
        (self.width_px, self.height_px)
    }

    pub fn gen_dims(&self) -> (u32, u32) {
        (self.gen_width_px, self.gen_height_px)
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.width_px == 0 || self.height_px == 0 {
            out.push(Violation::new("canvas.width_px/height_px", "canvas dimensions must be positive"));
        }
        if self.gen_width_px == 0 || self.gen_height_px == 0 {
            out.push(Violation::new("canvas.gen_width_px/gen_height_px", "generation dimensions must be positive"));
        }
        if self.gen_width_px % 8 != 0 || self.gen_height_px % 8 != 0 {
            out.push(Violation::new(
                "canvas.gen_width_px/gen_height_px",
                "generation dimensions must be divisible by 8",
            ));
        }
        if out.is_empty() {
            let canvas = self.width_px as f64 / self.height_px as f64;
            let gen = self.gen_width_px as f64 / self.gen_height_px as f64;
            if ((gen - canvas) / canvas).abs() > 0.005 {
                out.push(Violation::new(
                    "canvas",
                    "generation aspect ratio must match canvas aspect ratio within 0.5%",
                ));
            }
        }
        out
    }
}

/// Integer pixel rectangle. May lie partly or wholly outside the raster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PixelRect {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl PixelRect {
    pub fn right(&self) -> i64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> i64 {
        self.y + self.h
    }

    pub fn area(&self) -> i64 {
        self.w.max(0) * self.h.max(0)
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }

    /// Intersection with `[0,width)×[0,height)`, as `(x0, y0, x1, y1)` with
    /// exclusive upper bounds. Empty when `x0 >= x1` or `y0 >= y1`.
    pub fn clip(&self, width: u32, height: u32) -> (u32, u32, u32, u32) {
        let x0 = self.x.clamp(0, width as i64) as u32;
        let y0 = self.y.clamp(0, height as i64) as u32;
        let x1 = self.right().clamp(0, width as i64) as u32;
        let y1 = self.bottom().clamp(0, height as i64) as u32;
        (x0, y0, x1.max(x0), y1.max(y0))
    }
}

fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// Rectangle in normalized canvas coordinates: origin top-left, x right,
/// y down, `(cx, cy)` the center and `(w, h)` the extent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormRect {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl NormRect {
    pub const FULL: NormRect = NormRect { cx: 0.5, cy: 0.5, w: 1.0, h: 1.0 };

    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn from_edges(left: f64, top: f64, right: f64, bottom: f64) -> Self {
        Self {
            cx: (left + right) / 2.0,
            cy: (top + bottom) / 2.0,
            w: right - left,
            h: bottom - top,
        }
    }

    pub fn left(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn right(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn top(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn contains(&self, p: NormPoint) -> bool {
        p.x >= self.left() && p.x <= self.right() && p.y >= self.top() && p.y <= self.bottom()
    }

    pub fn intersects(&self, other: &NormRect) -> bool {
        self.left() < other.right()
            && other.left() < self.right()
            && self.top() < other.bottom()
            && other.top() < self.bottom()
    }

    /// Scales the extent about the center.
    pub fn scaled(&self, sx: f64, sy: f64) -> NormRect {
        NormRect { cx: self.cx, cy: self.cy, w: self.w * sx, h: self.h * sy }
    }

    /// Converts to pixels on a `width`×`height` grid. Edges round half-up
    /// independently, so adjacent rectangles tile without gaps; a positive
    /// extent always yields at least one pixel.
    pub fn to_pixels_on(&self, width: u32, height: u32) -> PixelRect {
        let (width, height) = (width as f64, height as f64);
        let x0 = round_half_up(self.left() * width);
        let y0 = round_half_up(self.top() * height);
        let x1 = round_half_up(self.right() * width);
        let y1 = round_half_up(self.bottom() * height);
        let w = if self.w > 0.0 { (x1 - x0).max(1) } else { 0 };
        let h = if self.h > 0.0 { (y1 - y0).max(1) } else { 0 };
        PixelRect { x: x0, y: y0, w, h }
    }
}

/// Pixel rectangle of `rect` at canvas render resolution.
pub fn to_pixels(rect: &NormRect, canvas: &Canvas) -> PixelRect {
    rect.to_pixels_on(canvas.width_px, canvas.height_px)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormPoint {
    pub x: f64,
    pub y: f64,
}

impl NormPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

string_id!(FeedId);
string_id!(ObjectId);

/// One participant's video rectangle on the canvas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedPlacement {
    pub feed_id: FeedId,
    pub rect: NormRect,
    /// Draw order among person layers; unique within a scene.
    pub z_rank: i32,
    /// Fraction of the feed rectangle whose background survives generation.
    pub preservation: f64,
    /// Live frames when true, the frozen first frame otherwise.
    pub live: bool,
}

impl FeedPlacement {
    pub fn new(feed_id: impl Into<FeedId>, rect: NormRect, z_rank: i32) -> Self {
        Self {
            feed_id: feed_id.into(),
            rect,
            z_rank,
            preservation: 0.5,
            live: true,
        }
    }

    pub fn with_preservation(mut self, preservation: f64) -> Self {
        self.preservation = preservation;
        self
    }
}

impl From<String> for FeedId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

/// The five depth-staggered layers of the 2.5D scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerRole {
    ForegroundObjects,
    PersonVideos,
    VideoBackgrounds,
    BackgroundMasks,
    Environment,
}

impl LayerRole {
    pub const ALL: [LayerRole; 5] = [
        LayerRole::ForegroundObjects,
        LayerRole::PersonVideos,
        LayerRole::VideoBackgrounds,
        LayerRole::BackgroundMasks,
        LayerRole::Environment,
    ];

    /// Back-to-front order of the live render.
    pub const LIVE_RENDER: [LayerRole; 3] =
        [LayerRole::Environment, LayerRole::PersonVideos, LayerRole::ForegroundObjects];

    /// Back-to-front order of the generation input. The mask layer only
    /// contributes the single-channel mask.
    pub const GENERATION_INPUT: [LayerRole; 3] =
        [LayerRole::Environment, LayerRole::VideoBackgrounds, LayerRole::BackgroundMasks];
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[default]
    WebcamInpaint,
    CanvasImg2Img,
}

/// Generation seed: fixed for reproducible runs or drawn per job.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Seed {
    Fixed(u64),
    #[default]
    Random,
}

impl Serialize for Seed {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Seed::Fixed(v) => s.serialize_u64(*v),
            Seed::Random => s.serialize_str("random"),
        }
    }
}

impl<'de> Deserialize<'de> for Seed {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(u64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(v) => Ok(Seed::Fixed(v)),
            Repr::Str(s) if s == "random" => Ok(Seed::Random),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("invalid seed {s:?}"))),
        }
    }
}

/// A salient object cut out of the environment and drawn in front of the
/// person layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ForegroundObject {
    pub object_id: ObjectId,
    pub class_label: String,
    /// Canvas-aligned coverage; nonzero marks object pixels.
    pub mask: Arc<GrayImage>,
    pub bbox: NormRect,
    /// Where a person seated behind the object should be anchored.
    pub anchor: NormPoint,
    pub occupied_by: Option<FeedId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub canvas: Canvas,
    pub feeds: Vec<FeedPlacement>,
    /// Canvas-sized opaque RGBA, or `None` before anything was generated.
    pub environment: Option<Arc<RgbaImage>>,
    pub foreground: Vec<ForegroundObject>,
    pub mode: Mode,
    pub activity_prompt: String,
    pub theme_prompt: String,
    pub prompt_strength: f64,
    pub seed: Seed,
}

impl Default for Scene {
    fn default() -> Self {
        Self::new(Canvas::default())
    }
}

impl Scene {
    pub fn new(canvas: Canvas) -> Self {
        Self {
            canvas,
            feeds: Vec::new(),
            environment: None,
            foreground: Vec::new(),
            mode: Mode::WebcamInpaint,
            activity_prompt: String::new(),
            theme_prompt: String::new(),
            prompt_strength: 0.5,
            seed: Seed::Random,
        }
    }

    pub fn feed(&self, id: &FeedId) -> Option<&FeedPlacement> {
        self.feeds.iter().find(|f| &f.feed_id == id)
    }

    pub fn feed_mut(&mut self, id: &FeedId) -> Option<&mut FeedPlacement> {
        self.feeds.iter_mut().find(|f| &f.feed_id == id)
    }

    /// Feeds in ascending z-rank (ties broken by id so the order is total).
    pub fn feeds_by_z(&self) -> Vec<&FeedPlacement> {
        let mut feeds: Vec<_> = self.feeds.iter().collect();
        feeds.sort_by(|a, b| a.z_rank.cmp(&b.z_rank).then_with(|| a.feed_id.cmp(&b.feed_id)));
        feeds
    }

    pub fn next_z_rank(&self) -> i32 {
        self.feeds.iter().map(|f| f.z_rank + 1).max().unwrap_or(0)
    }

    /// Serializes into a document, depositing rasters into `store`.
    pub fn to_doc(&self, store: &mut dyn RasterStore) -> Result<SceneDoc, SceneError> {
        let environment = match &self.environment {
            Some(env) => Some(RasterRef::new(store.put(&Raster::Rgba((**env).clone()))?)),
            None => None,
        };
        let mut foreground = Vec::with_capacity(self.foreground.len());
        for obj in &self.foreground {
            let digest = store.put(&Raster::Gray((*obj.mask).clone()))?;
            foreground.push(ForegroundDoc {
                object_id: obj.object_id.clone(),
                class_label: obj.class_label.clone(),
                mask: RasterRef::new(digest),
                bbox: obj.bbox,
                anchor: obj.anchor,
                occupied_by: obj.occupied_by.clone(),
            });
        }
        Ok(SceneDoc {
            schema_version: SCENE_SCHEMA_VERSION,
            canvas: self.canvas,
            feeds: self.feeds.clone(),
            environment,
            foreground,
            mode: self.mode,
            activity_prompt: self.activity_prompt.clone(),
            theme_prompt: self.theme_prompt.clone(),
            prompt_strength: self.prompt_strength,
            seed: self.seed,
        })
    }

    pub fn from_doc(doc: &SceneDoc, store: &dyn RasterStore) -> Result<Self, SceneError> {
        if doc.schema_version != SCENE_SCHEMA_VERSION {
            return Err(SceneError::SchemaVersionMismatch {
                found: doc.schema_version,
                expected: SCENE_SCHEMA_VERSION,
            });
        }
        let environment = match &doc.environment {
            Some(r) => match store.get(&r.digest)? {
                Raster::Rgba(img) => Some(Arc::new(img)),
                Raster::Gray(_) => {
                    return Err(SceneError::RasterKind { digest: r.digest.clone(), expected: "rgba" })
                }
            },
            None => None,
        };
        let mut foreground = Vec::with_capacity(doc.foreground.len());
        for obj in &doc.foreground {
            let mask = match store.get(&obj.mask.digest)? {
                Raster::Gray(g) => Arc::new(g),
                Raster::Rgba(_) => {
                    return Err(SceneError::RasterKind { digest: obj.mask.digest.clone(), expected: "gray" })
                }
            };
            foreground.push(ForegroundObject {
                object_id: obj.object_id.clone(),
                class_label: obj.class_label.clone(),
                mask,
                bbox: obj.bbox,
                anchor: obj.anchor,
                occupied_by: obj.occupied_by.clone(),
            });
        }
        Ok(Scene {
            canvas: doc.canvas,
            feeds: doc.feeds.clone(),
            environment,
            foreground,
            mode: doc.mode,
            activity_prompt: doc.activity_prompt.clone(),
            theme_prompt: doc.theme_prompt.clone(),
            prompt_strength: doc.prompt_strength,
            seed: doc.seed,
        })
    }

    /// Content digest of the scene, stable across serialization round trips.
    pub fn digest(&self) -> String {
        let mut sink = DigestOnlyStore;
        self.to_doc(&mut sink).expect("digest-only store never fails").digest()
    }
}

/// Computes raster digests without retaining pixels.
struct DigestOnlyStore;

impl RasterStore for DigestOnlyStore {
    fn put(&mut self, raster: &Raster) -> Result<RasterDigest, RasterError> {
        Ok(raster.digest())
    }

    fn get(&self, digest: &RasterDigest) -> Result<Raster, RasterError> {
        Err(RasterError::Missing(digest.clone()))
    }

    fn contains(&self, _digest: &RasterDigest) -> bool {
        false
    }
}

/// Reference from a document to a stored PNG.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterRef {
    /// Path relative to the document, `rasters/<digest>.png`.
    pub path: String,
    pub digest: RasterDigest,
}

impl RasterRef {
    pub fn new(digest: RasterDigest) -> Self {
        Self {
            path: format!("{RASTER_DIR}/{}", DirRasterStore::file_name(&digest)),
            digest,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForegroundDoc {
    pub object_id: ObjectId,
    pub class_label: String,
    pub mask: RasterRef,
    pub bbox: NormRect,
    pub anchor: NormPoint,
    pub occupied_by: Option<FeedId>,
}

/// Serialized scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDoc {
    pub schema_version: u32,
    pub canvas: Canvas,
    pub feeds: Vec<FeedPlacement>,
    pub environment: Option<RasterRef>,
    pub foreground: Vec<ForegroundDoc>,
    pub mode: Mode,
    pub activity_prompt: String,
    pub theme_prompt: String,
    pub prompt_strength: f64,
    pub seed: Seed,
}

impl SceneDoc {
    pub fn digest(&self) -> String {
        digest_bytes(&serde_json::to_vec(self).expect("scene documents always serialize"))
    }

    /// Names of top-level fields whose values differ between two documents.
    pub fn changed_fields(&self, other: &SceneDoc) -> Vec<&'static str> {
        let mut out = Vec::new();
        macro_rules! cmp {
            ($($f:ident),*) => { $( if self.$f != other.$f { out.push(stringify!($f)); } )* };
        }
        cmp!(canvas, feeds, environment, foreground, mode, activity_prompt, theme_prompt, prompt_strength, seed);
        out
    }
}

/// Writes `scene.json`-style documents with a sibling `rasters/` directory.
pub fn save_scene_file(scene: &Scene, path: &Path) -> Result<SceneDoc, SceneError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut store = DirRasterStore::open(dir.join(RASTER_DIR))?;
    let doc = scene.to_doc(&mut store)?;
    let text = serde_json::to_string_pretty(&doc).map_err(|e| SceneError::Malformed(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| SceneError::Io(format!("{}: {e}", path.display())))?;
    Ok(doc)
}

pub fn load_scene_file(path: &Path) -> Result<Scene, SceneError> {
    let text = std::fs::read_to_string(path).map_err(|e| SceneError::Io(format!("{}: {e}", path.display())))?;
    let doc: SceneDoc = serde_json::from_str(&text).map_err(|e| SceneError::Malformed(e.to_string()))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let store = DirRasterStore::open(dir.join(RASTER_DIR))?;
    Scene::from_doc(&doc, &store)
}

/// A broken scene invariant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self { field: field.into(), rule: rule.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Largest feed extent reachable through direct manipulation.
pub const MAX_FEED_EXTENT: f64 = 2.0;

fn unit(v: f64) -> bool {
    v.is_finite() && (0.0..=1.0).contains(&v)
}

/// Checks every scene invariant, returning one violation per broken rule.
pub fn validate_scene(scene: &Scene) -> Vec<Violation> {
    let mut out = scene.canvas.violations();

    let mut ids = HashSet::new();
    let mut ranks = HashSet::new();
    let mut dup_rank_reported = HashSet::new();
    for (i, feed) in scene.feeds.iter().enumerate() {
        let field = |name: &str| format!("feeds[{i}].{name}");
        if !ids.insert(&feed.feed_id) {
            out.push(Violation::new(field("feed_id"), "feed ids must be unique"));
        }
        if !ranks.insert(feed.z_rank) && dup_rank_reported.insert(feed.z_rank) {
            out.push(Violation::new(field("z_rank"), format!("z_rank {} must be unique per feed", feed.z_rank)));
        }
        if !unit(feed.preservation) {
            out.push(Violation::new(field("preservation"), "preservation must lie in range [0,1]"));
        }
        let r = feed.rect;
        if !unit(r.cx) || !unit(r.cy) {
            out.push(Violation::new(field("rect"), "center must lie in [0,1]"));
        }
        if !(r.w.is_finite() && r.h.is_finite() && r.w > 0.0 && r.h > 0.0 && r.w <= MAX_FEED_EXTENT && r.h <= MAX_FEED_EXTENT) {
            out.push(Violation::new(field("rect"), "extent must lie in (0,2]"));
        }
    }

    if !unit(scene.prompt_strength) {
        out.push(Violation::new("prompt_strength", "prompt strength must lie in range [0,1]"));
    }

    if let Some(env) = &scene.environment {
        if env.dimensions() != scene.canvas.render_dims() {
            out.push(Violation::new("environment", "environment must be canvas-sized"));
        }
    }

    let mut object_ids = HashSet::new();
    let mut occupants = HashSet::new();
    for (i, obj) in scene.foreground.iter().enumerate() {
        let field = |name: &str| format!("foreground[{i}].{name}");
        if !object_ids.insert(&obj.object_id) {
            out.push(Violation::new(field("object_id"), "object ids must be unique"));
        }
        if obj.mask.dimensions() != scene.canvas.render_dims() {
            out.push(Violation::new(field("mask"), "mask must be canvas-aligned"));
        } else if !mask_within_bbox(&obj.mask, &obj.bbox) {
            out.push(Violation::new(field("mask"), "mask pixels must lie within bbox"));
        }
        if !obj.bbox.contains(obj.anchor) {
            out.push(Violation::new(field("anchor"), "anchor must lie inside bbox"));
        }
        if let Some(feed) = &obj.occupied_by {
            if scene.feed(feed).is_none() {
                out.push(Violation::new(field("occupied_by"), format!("unknown feed {feed}")));
            } else if !occupants.insert(feed) {
                out.push(Violation::new(field("occupied_by"), "a feed may occupy at most one object"));
            }
        }
    }
    out
}

fn mask_within_bbox(mask: &GrayImage, bbox: &NormRect) -> bool {
    let px = bbox.to_pixels_on(mask.width(), mask.height());
    let dilated = PixelRect { x: px.x - 1, y: px.y - 1, w: px.w + 2, h: px.h + 2 };
    mask.enumerate_pixels()
        .all(|(x, y, v)| v[0] == 0 || dilated.contains(x as i64, y as i64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::MemoryRasterStore;
    use image::{Luma, Rgba};

    fn px(cx: f64, cy: f64, w: f64, h: f64) -> (i64, i64, i64, i64) {
        let r = to_pixels(&NormRect::new(cx, cy, w, h), &Canvas::default());
        (r.x, r.y, r.w, r.h)
    }

    #[test]
    fn to_pixels_examples() {
        assert_eq!(px(0.5, 0.5, 1.0, 1.0), (0, 0, 1280, 720));
        assert_eq!(px(0.5, 0.5, 0.5, 0.5), (320, 180, 640, 360));
        assert_eq!(px(0.0, 0.0, 0.25, 0.25), (-160, -90, 320, 180));
    }

    #[test]
    fn to_pixels_tiny_extent_is_one_pixel() {
        assert_eq!(px(0.5, 0.5, 1e-6, 1e-6).2, 1);
        assert_eq!(px(0.5, 0.5, 0.0, 0.0).2, 0);
    }

    #[test]
    fn default_canvas_is_valid() {
        assert!(Canvas::default().violations().is_empty());
    }

    #[test]
    fn canvas_rules() {
        let c = Canvas { gen_width_px: 1020, ..Canvas::default() };
        assert!(c.violations().iter().any(|v| v.rule.contains("divisible by 8")));
        let c = Canvas { gen_width_px: 1024, gen_height_px: 768, ..Canvas::default() };
        assert!(c.violations().iter().any(|v| v.rule.contains("aspect")));
    }

    #[test]
    fn empty_scene_validates() {
        assert!(validate_scene(&Scene::default()).is_empty());
    }

    #[test]
    fn shared_z_rank_is_one_violation() {
        let mut scene = Scene::default();
        scene.feeds.push(FeedPlacement::new("a", NormRect::new(0.3, 0.5, 0.3, 0.4), 3));
        scene.feeds.push(FeedPlacement::new("b", NormRect::new(0.7, 0.5, 0.3, 0.4), 3));
        let v = validate_scene(&scene);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].field.contains("z_rank") && v[0].rule.contains("unique"));
    }

    #[test]
    fn preservation_out_of_range() {
        let mut scene = Scene::default();
        scene.feeds.push(FeedPlacement::new("a", NormRect::new(0.3, 0.5, 0.3, 0.4), 0).with_preservation(1.2));
        let v = validate_scene(&scene);
        assert_eq!(v.len(), 1);
        assert!(v[0].field.ends_with("preservation") && v[0].rule.contains("[0,1]"));
    }

    #[test]
    fn foreground_rules() {
        let canvas = Canvas { width_px: 32, height_px: 16, gen_width_px: 32, gen_height_px: 16 };
        let mut scene = Scene::new(canvas);
        let mut mask = GrayImage::new(32, 16);
        mask.put_pixel(30, 2, Luma([255]));
        scene.foreground.push(ForegroundObject {
            object_id: "chair-0".into(),
            class_label: "chair".into(),
            mask: Arc::new(mask),
            bbox: NormRect::new(0.25, 0.5, 0.2, 0.2),
            anchor: NormPoint::new(0.9, 0.9),
            occupied_by: Some("ghost".into()),
        });
        let fields: Vec<_> = validate_scene(&scene).into_iter().map(|v| v.field).collect();
        assert_eq!(fields, vec!["foreground[0].mask", "foreground[0].anchor", "foreground[0].occupied_by"]);
    }

    #[test]
    fn seed_serde() {
        assert_eq!(serde_json::to_string(&Seed::Fixed(42)).unwrap(), "42");
        assert_eq!(serde_json::to_string(&Seed::Random).unwrap(), "\"random\"");
        assert_eq!(serde_json::from_str::<Seed>("7").unwrap(), Seed::Fixed(7));
        assert!(serde_json::from_str::<Seed>("\"sometimes\"").is_err());
    }

    #[test]
    fn doc_round_trip_with_rasters() {
        let canvas = Canvas { width_px: 16, height_px: 9, gen_width_px: 16, gen_height_px: 9 };
        let mut scene = Scene::new(canvas);
        scene.environment = Some(Arc::new(RgbaImage::from_pixel(16, 9, Rgba([9, 8, 7, 255]))));
        scene.feeds.push(FeedPlacement::new("a", NormRect::new(0.3, 0.5, 0.3, 0.4), 0));
        scene.foreground.push(ForegroundObject {
            object_id: "t".into(),
            class_label: "table".into(),
            mask: Arc::new(GrayImage::new(16, 9)),
            bbox: NormRect::new(0.5, 0.5, 0.5, 0.5),
            anchor: NormPoint::new(0.5, 0.4),
            occupied_by: None,
        });
        let mut store = MemoryRasterStore::new();
        let doc = scene.to_doc(&mut store).unwrap();
        let back = Scene::from_doc(&doc, &store).unwrap();
        assert_eq!(back, scene);
        assert_eq!(back.digest(), scene.digest());
        assert_eq!(doc.digest(), scene.digest());
    }

    #[test]
    fn future_schema_rejected() {
        let mut store = MemoryRasterStore::new();
        let mut doc = Scene::default().to_doc(&mut store).unwrap();
        doc.schema_version = 99;
        assert!(matches!(
            Scene::from_doc(&doc, &store),
            Err(SceneError::SchemaVersionMismatch { found: 99, .. })
        ));
    }

    #[test]
    fn scene_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        let mut scene = Scene::new(Canvas { width_px: 8, height_px: 8, gen_width_px: 8, gen_height_px: 8 });
        scene.environment = Some(Arc::new(RgbaImage::from_pixel(8, 8, Rgba([1, 2, 3, 255]))));
        let doc = save_scene_file(&scene, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"schema_version\": 1"));
        assert!(dir.path().join(&doc.environment.unwrap().path).exists());
        assert_eq!(load_scene_file(&path).unwrap(), scene);
    }
}
