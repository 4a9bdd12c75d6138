//! Person matting, occlusion fill and foreground-object extraction.
//!
//! Feeds are split into a person layer (`person_alpha`) and a background
//! whose person-shaped hole is filled, either by an inpainting job on the
//! generation backend or by an offline boundary-diffusion fallback.
//! Generated environments are segmented into salient furniture that is
//! later drawn in front of the person layer.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use image::{DynamicImage, GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{self, HttpError};
use crate::orchestrator::{BackendError, GenerationBackend, GenerationJob, JobMode};
use crate::raster::{self, digest_rgb, RasterDigest};
use crate::scene::{ForegroundObject, NormPoint, NormRect, ObjectId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentationError {
    #[error("segmentation service unavailable: {0}")]
    ServiceUnavailable(String),
    #[error("frame has no alpha channel")]
    NoAlphaChannel,
    #[error("frame is empty")]
    EmptyFrame,
    #[error("mask dimensions {found:?} do not match frame {expected:?}")]
    DimensionMismatch { expected: (u32, u32), found: (u32, u32) },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Endpoint of an external matting or segmentation service.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceProfile {
    pub base_url: String,
    #[serde(default = "default_service_timeout")]
    pub timeout_s: f64,
}

fn default_service_timeout() -> f64 {
    30.0
}

impl ServiceProfile {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self { base_url: base_url.into(), timeout_s: default_service_timeout() }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), path)
    }

    fn agent(&self) -> ureq::Agent {
        http::agent(Duration::from_secs_f64(self.timeout_s.max(0.001)))
    }
}

/// Matting service wire format: `POST /v1/matte`.
pub const MATTE_PATH: &str = "/v1/matte";
/// Segmentation service wire format: `POST /v1/segment`.
pub const SEGMENT_PATH: &str = "/v1/segment";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImagePayload {
    /// Base64 PNG.
    pub image: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatteResponse {
    /// Base64 single-channel PNG, 255 = person.
    pub mask: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub instances: Vec<InstancePayload>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstancePayload {
    pub label: String,
    pub confidence: f64,
    /// Base64 single-channel PNG aligned to the submitted image.
    pub mask: String,
}

fn service_err(e: HttpError) -> SegmentationError {
    SegmentationError::ServiceUnavailable(e.to_string())
}

fn decode_mask(b64: &str) -> Result<GrayImage, SegmentationError> {
    let bytes = B64
        .decode(b64)
        .map_err(|e| SegmentationError::ServiceUnavailable(format!("bad base64 mask: {e}")))?;
    raster::decode_png_gray(&bytes).map_err(|e| SegmentationError::ServiceUnavailable(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MattingMethod {
    /// Use the frame's own alpha channel as the person mask.
    AlphaChannel,
    /// Pixels within `tolerance` (Euclidean RGB distance) of `key` are background.
    ChromaKey { key: [u8; 3], tolerance: f64 },
    ExternalService(ServiceProfile),
}

impl MattingMethod {
    pub fn green_screen() -> Self {
        MattingMethod::ChromaKey { key: [0, 255, 0], tolerance: 90.0 }
    }
}

/// How the background hole behind a person is synthesized.
pub enum FillStrategy<'a> {
    /// Inpaint the hole with the generation backend.
    BackendInpaint(&'a dyn GenerationBackend),
    /// Offline boundary-color diffusion.
    BlurExtend,
}

/// A feed frame split into person and background layers.
#[derive(Clone, Debug, PartialEq)]
pub struct MattedFrame {
    pub color: RgbImage,
    /// 255 = person, 0 = background.
    pub person_alpha: GrayImage,
    /// The frame with the person hole filled.
    pub background: RgbImage,
    /// Set when the fill had nothing to extend from.
    pub low_confidence: bool,
}

impl MattedFrame {
    /// Mattes an RGBA frame by its own alpha and fills the hole offline.
    pub fn from_rgba(frame: &image::RgbaImage) -> Self {
        matte_person(&DynamicImage::ImageRgba8(frame.clone()), &MattingMethod::AlphaChannel, &FillStrategy::BlurExtend)
            .expect("offline alpha matting of a nonempty RGBA frame cannot fail")
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.color.dimensions()
    }
}

/// Splits a frame into color and person alpha without filling the hole.
pub fn person_matte(frame: &DynamicImage, method: &MattingMethod) -> Result<(RgbImage, GrayImage), SegmentationError> {
    if frame.width() == 0 || frame.height() == 0 {
        return Err(SegmentationError::EmptyFrame);
    }
    let color = frame.to_rgb8();
    let person_alpha = match method {
        MattingMethod::AlphaChannel => {
            if !frame.color().has_alpha() {
                return Err(SegmentationError::NoAlphaChannel);
            }
            let rgba = frame.to_rgba8();
            GrayImage::from_fn(rgba.width(), rgba.height(), |x, y| Luma([rgba.get_pixel(x, y)[3]]))
        }
        MattingMethod::ChromaKey { key, tolerance } => chroma_key(&color, *key, *tolerance),
        MattingMethod::ExternalService(profile) => {
            let payload = ImagePayload { image: B64.encode(raster::encode_png_rgb(&color)) };
            let resp: MatteResponse =
                http::post_json(&profile.agent(), &profile.url(MATTE_PATH), &payload, None).map_err(service_err)?;
            let mask = decode_mask(&resp.mask)?;
            if mask.dimensions() != color.dimensions() {
                return Err(SegmentationError::DimensionMismatch {
                    expected: color.dimensions(),
                    found: mask.dimensions(),
                });
            }
            mask
        }
    };
    Ok((color, person_alpha))
}

pub fn matte_person(
    frame: &DynamicImage,
    method: &MattingMethod,
    fill: &FillStrategy<'_>,
) -> Result<MattedFrame, SegmentationError> {
    let (color, person_alpha) = person_matte(frame, method)?;
    let filled = fill_occlusion(&color, &person_alpha, fill)?;
    Ok(MattedFrame {
        color,
        person_alpha,
        background: filled.background,
        low_confidence: filled.low_confidence,
    })
}

fn chroma_key(color: &RgbImage, key: [u8; 3], tolerance: f64) -> GrayImage {
    GrayImage::from_fn(color.width(), color.height(), |x, y| {
        let Rgb(px) = *color.get_pixel(x, y);
        let d2: f64 = px.iter().zip(key).map(|(&a, b)| (a as f64 - b as f64).powi(2)).sum();
        Luma([if d2.sqrt() <= tolerance { 0 } else { 255 }])
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FillOutcome {
    pub background: RgbImage,
    pub low_confidence: bool,
}

/// Iteration cap of the offline fill.
pub const BLUR_EXTEND_MAX_ITERATIONS: usize = 500;
/// The offline fill stops once no channel moves by this much in one sweep.
pub const BLUR_EXTEND_CONVERGENCE: f64 = 1.0;

const FILL_PROMPT: &str = "seamless continuation of the surrounding background";
const FILL_NEGATIVE_PROMPT: &str = "people, humans, faces, text, watermark";

/// Fills the pixels where `person_alpha > 0`. Pixels outside the hole are
/// returned untouched.
pub fn fill_occlusion(
    color: &RgbImage,
    person_alpha: &GrayImage,
    strategy: &FillStrategy<'_>,
) -> Result<FillOutcome, SegmentationError> {
    if color.dimensions() != person_alpha.dimensions() {
        return Err(SegmentationError::DimensionMismatch {
            expected: color.dimensions(),
            found: person_alpha.dimensions(),
        });
    }
    let hole: Vec<bool> = person_alpha.pixels().map(|p| p[0] > 0).collect();
    if !hole.iter().any(|&h| h) {
        return Ok(FillOutcome { background: color.clone(), low_confidence: false });
    }
    match strategy {
        FillStrategy::BlurExtend => Ok(blur_extend(color, &hole)),
        FillStrategy::BackendInpaint(backend) => {
            let mask = GrayImage::from_fn(color.width(), color.height(), |x, y| {
                Luma([if hole[(y * color.width() + x) as usize] { 255 } else { 0 }])
            });
            let job = GenerationJob::occlusion_fill(color.clone(), mask, FILL_PROMPT, FILL_NEGATIVE_PROMPT);
            debug_assert_eq!(job.mode, JobMode::Inpaint);
            let result = backend.generate(&job)?;
            let generated = raster::resize_rgb(&result, color.width(), color.height());
            let mut background = color.clone();
            for (i, (x, y, px)) in background.enumerate_pixels_mut().enumerate() {
                if hole[i] {
                    *px = *generated.get_pixel(x, y);
                }
            }
            Ok(FillOutcome { background, low_confidence: false })
        }
    }
}

fn blur_extend(color: &RgbImage, hole: &[bool]) -> FillOutcome {
    let (w, h) = (color.width() as usize, color.height() as usize);
    if hole.iter().all(|&v| v) {
        return FillOutcome {
            background: RgbImage::from_pixel(color.width(), color.height(), Rgb([128, 128, 128])),
            low_confidence: true,
        };
    }
    let mut field: Vec<[f64; 3]> = color.pixels().map(|p| p.0.map(|c| c as f64)).collect();
    let neighbours = |i: usize| {
        let (x, y) = (i % w, i / w);
        let mut n = [usize::MAX; 4];
        if x > 0 {
            n[0] = i - 1;
        }
        if x + 1 < w {
            n[1] = i + 1;
        }
        if y > 0 {
            n[2] = i - w;
        }
        if y + 1 < h {
            n[3] = i + w;
        }
        n
    };
    let hole_idx: Vec<usize> = (0..w * h).filter(|&i| hole[i]).collect();

    // Seed each hole pixel with the inverse-distance blend of the nearest
    // known pixel in each of the four axis directions, falling back to the
    // mean of the hole's border when a pixel sees none.
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for &i in &hole_idx {
        for j in neighbours(i) {
            if j != usize::MAX && !hole[j] {
                for c in 0..3 {
                    sum[c] += field[j][c];
                }
                count += 1;
            }
        }
    }
    let border_mean = sum.map(|s| s / count as f64);
    let seeds: Vec<[f64; 3]> = hole_idx
        .iter()
        .map(|&i| {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            let mut acc = [0.0f64; 3];
            let mut weight = 0.0;
            for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (mut cx, mut cy, mut d) = (x + dx, y + dy, 1.0);
                while cx >= 0 && cy >= 0 && (cx as usize) < w && (cy as usize) < h {
                    let j = cy as usize * w + cx as usize;
                    if !hole[j] {
                        for c in 0..3 {
                            acc[c] += field[j][c] / d;
                        }
                        weight += 1.0 / d;
                        break;
                    }
                    cx += dx;
                    cy += dy;
                    d += 1.0;
                }
            }
            if weight > 0.0 {
                acc.map(|a| a / weight)
            } else {
                border_mean
            }
        })
        .collect();
    for (&i, seed) in hole_idx.iter().zip(seeds) {
        field[i] = seed;
    }

    let mut next = field.clone();
    for _ in 0..BLUR_EXTEND_MAX_ITERATIONS {
        let mut max_change = 0.0f64;
        for &i in &hole_idx {
            let mut acc = [0.0f64; 3];
            let mut n = 0.0;
            for j in neighbours(i) {
                if j != usize::MAX {
                    for c in 0..3 {
                        acc[c] += field[j][c];
                    }
                    n += 1.0;
                }
            }
            let v = acc.map(|a| a / n);
            for c in 0..3 {
                max_change = max_change.max((v[c] - field[i][c]).abs());
            }
            next[i] = v;
        }
        for &i in &hole_idx {
            field[i] = next[i];
        }
        if max_change < BLUR_EXTEND_CONVERGENCE {
            break;
        }
    }

    let mut background = color.clone();
    for &i in &hole_idx {
        let v = field[i].map(|c| (c + 0.5).floor().clamp(0.0, 255.0) as u8);
        background.put_pixel((i % w) as u32, (i / w) as u32, Rgb(v));
    }
    FillOutcome { background, low_confidence: false }
}

/// One detected object instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub class_label: String,
    pub mask: Arc<GrayImage>,
    pub confidence: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SegmentationResult {
    pub instances: Vec<Instance>,
}

pub trait SegmentationBackend: Send + Sync {
    fn segment(&self, environment: &RgbImage) -> Result<Vec<Instance>, SegmentationError>;
}

/// Furniture classes that people can plausibly sit or stand behind.
pub const DEFAULT_ALLOWLIST: [&str; 7] = ["chair", "couch", "table", "desk", "bench", "potted plant", "bed"];
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectFilter {
    pub allowlist: BTreeSet<String>,
    pub min_confidence: f64,
}

impl Default for ObjectFilter {
    fn default() -> Self {
        Self {
            allowlist: DEFAULT_ALLOWLIST.iter().map(|s| s.to_string()).collect(),
            min_confidence: DEFAULT_MIN_CONFIDENCE,
        }
    }
}

impl ObjectFilter {
    pub fn with_allowlist<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { allowlist: labels.into_iter().map(Into::into).collect(), ..Self::default() }
    }

    pub fn keeps(&self, instance: &Instance) -> bool {
        self.allowlist.contains(&instance.class_label) && instance.confidence >= self.min_confidence
    }
}

/// Runs the backend and keeps allowlisted instances at or above the
/// confidence threshold, in backend order.
pub fn segment_objects(
    environment: &RgbImage,
    filter: &ObjectFilter,
    backend: &dyn SegmentationBackend,
) -> Result<SegmentationResult, SegmentationError> {
    if filter.allowlist.is_empty() {
        return Ok(SegmentationResult::default());
    }
    let instances = backend
        .segment(environment)?
        .into_iter()
        .filter(|i| filter.keeps(i))
        .collect();
    Ok(SegmentationResult { instances })
}

/// Vertical position of the anchor inside the bbox, from the top.
pub const ANCHOR_DEPTH: f64 = 0.33;

/// Tight bounding box of a mask's nonzero pixels, in normalized coordinates.
pub fn mask_bbox(mask: &GrayImage) -> Option<NormRect> {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    for (x, y, v) in mask.enumerate_pixels() {
        if v[0] > 0 {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
    }
    if x0 == u32::MAX {
        return None;
    }
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    Some(NormRect::from_edges(x0 as f64 / w, y0 as f64 / h, (x1 + 1) as f64 / w, (y1 + 1) as f64 / h))
}

fn object_id(label: &str, index: usize) -> ObjectId {
    ObjectId(format!("{}-{index}", label.replace(' ', "-")))
}

/// One foreground object per nonempty instance mask, in instance order.
/// Masks not at the environment's size are resampled to it.
pub fn extract_foreground(environment: &RgbImage, seg: &SegmentationResult) -> Vec<ForegroundObject> {
    let (w, h) = environment.dimensions();
    seg.instances
        .iter()
        .enumerate()
        .filter_map(|(i, inst)| {
            let mask = if inst.mask.dimensions() == (w, h) {
                inst.mask.clone()
            } else {
                Arc::new(raster::resize_gray_nearest(&inst.mask, w, h))
            };
            let bbox = mask_bbox(&mask)?;
            Some(ForegroundObject {
                object_id: object_id(&inst.class_label, i),
                class_label: inst.class_label.clone(),
                mask,
                bbox,
                anchor: NormPoint::new(bbox.cx, bbox.top() + ANCHOR_DEPTH * bbox.h),
                occupied_by: None,
            })
        })
        .collect()
}

/// HTTP client for an external segmentation service.
#[derive(Clone, Debug)]
pub struct HttpSegmenter {
    pub profile: ServiceProfile,
}

impl SegmentationBackend for HttpSegmenter {
    fn segment(&self, environment: &RgbImage) -> Result<Vec<Instance>, SegmentationError> {
        let payload = ImagePayload { image: B64.encode(raster::encode_png_rgb(environment)) };
        let resp: SegmentResponse =
            http::post_json(&self.profile.agent(), &self.profile.url(SEGMENT_PATH), &payload, None)
                .map_err(service_err)?;
        resp.instances
            .into_iter()
            .map(|i| {
                Ok(Instance {
                    class_label: i.label,
                    confidence: i.confidence,
                    mask: Arc::new(decode_mask(&i.mask)?),
                })
            })
            .collect()
    }
}

/// Deterministic segmentation for tests and offline use.
///
/// Fixture instances are returned for images whose digest is registered.
/// Any other image gets a procedural layout of chairs and a table derived
/// from its digest, or nothing when the procedural layout is disabled.
#[derive(Clone, Debug, Default)]
pub struct MockSegmenter {
    fixtures: HashMap<RasterDigest, Vec<Instance>>,
    procedural: bool,
}

impl MockSegmenter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn procedural() -> Self {
        Self { fixtures: HashMap::new(), procedural: true }
    }

    pub fn with_fixture(mut self, image: &RgbImage, instances: Vec<Instance>) -> Self {
        self.fixtures.insert(digest_rgb(image), instances);
        self
    }
}

impl SegmentationBackend for MockSegmenter {
    fn segment(&self, environment: &RgbImage) -> Result<Vec<Instance>, SegmentationError> {
        let digest = digest_rgb(environment);
        if let Some(instances) = self.fixtures.get(&digest) {
            return Ok(instances.clone());
        }
        if !self.procedural {
            return Ok(Vec::new());
        }
        Ok(procedural_instances(&digest, environment.width(), environment.height()))
    }
}

fn procedural_instances(digest: &RasterDigest, w: u32, h: u32) -> Vec<Instance> {
    let bytes = hex::decode(digest.as_str()).unwrap_or_else(|_| vec![0; 32]);
    let chairs = 2 + (bytes[0] % 3) as usize;
    let mut out = Vec::with_capacity(chairs + 1);
    for i in 0..chairs {
        let jitter = (bytes[1 + i] as f64 / 255.0 - 0.5) * 0.04;
        let cx = (i as f64 + 0.5) / chairs as f64 + jitter;
        let rect = NormRect::new(cx, 0.78, 0.5 / chairs as f64, 0.3);
        out.push(Instance {
            class_label: "chair".into(),
            mask: Arc::new(fill_rect_mask(w, h, &rect)),
            confidence: 0.6 + bytes[8 + i] as f64 / 255.0 * 0.39,
        });
    }
    out.push(Instance {
        class_label: "table".into(),
        mask: Arc::new(fill_rect_mask(w, h, &NormRect::new(0.5, 0.92, 0.6, 0.14))),
        confidence: 0.9,
    });
    out
}

/// Binary mask with 255 inside `rect` (clipped to the raster).
pub fn fill_rect_mask(w: u32, h: u32, rect: &NormRect) -> GrayImage {
    let px = rect.to_pixels_on(w, h);
    let (x0, y0, x1, y1) = px.clip(w, h);
    let mut mask = GrayImage::new(w, h);
    for y in y0..y1 {
        for x in x0..x1 {
            mask.put_pixel(x, y, Luma([255]));
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgba, RgbaImage};

    fn frame_with_square(bg: [u8; 3], fg: [u8; 3]) -> RgbImage {
        RgbImage::from_fn(24, 16, |x, y| if (8..14).contains(&x) && (4..10).contains(&y) { Rgb(fg) } else { Rgb(bg) })
    }

    #[test]
    fn alpha_channel_passes_through() {
        let frame = RgbaImage::from_fn(10, 6, |x, y| Rgba([10, 20, 30, ((x * 25 + y) % 256) as u8]));
        let matted = matte_person(&DynamicImage::ImageRgba8(frame.clone()), &MattingMethod::AlphaChannel, &FillStrategy::BlurExtend).unwrap();
        for (x, y, a) in matted.person_alpha.enumerate_pixels() {
            assert_eq!(a[0], frame.get_pixel(x, y)[3]);
        }
    }

    #[test]
    fn alpha_channel_requires_alpha() {
        let frame = DynamicImage::ImageRgb8(RgbImage::new(4, 4));
        assert_eq!(
            matte_person(&frame, &MattingMethod::AlphaChannel, &FillStrategy::BlurExtend),
            Err(SegmentationError::NoAlphaChannel)
        );
    }

    #[test]
    fn pure_green_is_all_background() {
        let frame = DynamicImage::ImageRgb8(RgbImage::from_pixel(12, 12, Rgb([0, 255, 0])));
        for tol in [0.0, 10.0, 500.0] {
            let m = matte_person(&frame, &MattingMethod::ChromaKey { key: [0, 255, 0], tolerance: tol }, &FillStrategy::BlurExtend).unwrap();
            assert!(m.person_alpha.pixels().all(|p| p[0] == 0));
        }
    }

    #[test]
    fn chroma_key_finds_red_square() {
        let color = frame_with_square([0, 255, 0], [255, 0, 0]);
        let m = matte_person(&DynamicImage::ImageRgb8(color.clone()), &MattingMethod::green_screen(), &FillStrategy::BlurExtend).unwrap();
        // oracle: per-pixel distance to the key
        for (x, y, px) in color.enumerate_pixels() {
            let d = px.0.iter().zip([0u8, 255, 0]).map(|(&a, b)| (a as f64 - b as f64).powi(2)).sum::<f64>().sqrt();
            let expected = if d <= 90.0 { 0 } else { 255 };
            assert_eq!(m.person_alpha.get_pixel(x, y)[0], expected, "({x},{y})");
        }
        assert_eq!(m.person_alpha.pixels().filter(|p| p[0] == 255).count(), 36);
        // the filled hole is green again
        assert!(m.background.pixels().all(|p| *p == Rgb([0, 255, 0])));
    }

    #[test]
    fn fill_constant_background_exact() {
        let color = frame_with_square([10, 20, 200], [200, 200, 10]);
        let alpha = GrayImage::from_fn(24, 16, |x, y| Luma([if *color.get_pixel(x, y) == Rgb([200, 200, 10]) { 255 } else { 0 }]));
        let out = fill_occlusion(&color, &alpha, &FillStrategy::BlurExtend).unwrap();
        assert!(out.background.pixels().all(|p| *p == Rgb([10, 20, 200])));
        assert!(!out.low_confidence);
    }

    #[test]
    fn fill_all_person_offline_is_midgray_low_confidence() {
        let color = RgbImage::from_pixel(8, 8, Rgb([1, 2, 3]));
        let alpha = GrayImage::from_pixel(8, 8, Luma([255]));
        let out = fill_occlusion(&color, &alpha, &FillStrategy::BlurExtend).unwrap();
        assert!(out.low_confidence);
        assert!(out.background.pixels().all(|p| *p == Rgb([128, 128, 128])));
    }

    #[test]
    fn fill_without_hole_is_identity() {
        let color = frame_with_square([1, 2, 3], [4, 5, 6]);
        let out = fill_occlusion(&color, &GrayImage::new(24, 16), &FillStrategy::BlurExtend).unwrap();
        assert_eq!(out.background, color);
    }

    #[test]
    fn mask_bbox_is_tight() {
        let mut m = GrayImage::new(10, 10);
        m.put_pixel(2, 3, Luma([255]));
        m.put_pixel(5, 7, Luma([1]));
        let b = mask_bbox(&m).unwrap();
        let px = b.to_pixels_on(10, 10);
        assert_eq!((px.x, px.y, px.w, px.h), (2, 3, 4, 5));
        assert!(mask_bbox(&GrayImage::new(3, 3)).is_none());
    }

    #[test]
    fn anchor_in_upper_third() {
        let inst = Instance {
            class_label: "chair".into(),
            mask: Arc::new(fill_rect_mask(100, 100, &NormRect::new(0.5, 0.5, 0.2, 0.3))),
            confidence: 0.9,
        };
        let env = RgbImage::new(100, 100);
        let objs = extract_foreground(&env, &SegmentationResult { instances: vec![inst] });
        assert_eq!(objs.len(), 1);
        let o = &objs[0];
        assert!(o.bbox.contains(o.anchor));
        assert!(o.anchor.y <= o.bbox.top() + o.bbox.h / 3.0);
        assert!((o.anchor.y - (o.bbox.top() + 0.33 * o.bbox.h)).abs() < 1e-12);
        assert!(extract_foreground(&env, &SegmentationResult::default()).is_empty());
    }

    #[test]
    fn filter_rules() {
        let env = RgbImage::new(4, 4);
        let low = |label: &str, c: f64| Instance { class_label: label.into(), mask: Arc::new(GrayImage::new(4, 4)), confidence: c };
        let seg = MockSegmenter::new().with_fixture(&env, vec![low("chair", 0.3), low("table", 0.3)]);
        assert!(segment_objects(&env, &ObjectFilter::default(), &seg).unwrap().instances.is_empty());
        let seg = MockSegmenter::new().with_fixture(&env, vec![low("chair", 0.9)]);
        assert!(segment_objects(&env, &ObjectFilter::with_allowlist(Vec::<String>::new()), &seg).unwrap().instances.is_empty());
        assert_eq!(segment_objects(&env, &ObjectFilter::default(), &seg).unwrap().instances.len(), 1);
    }

    #[test]
    fn procedural_mock_is_deterministic() {
        let env = RgbImage::from_pixel(64, 36, Rgb([5, 6, 7]));
        let seg = MockSegmenter::procedural();
        let a = seg.segment(&env).unwrap();
        let b = seg.segment(&env).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().filter(|i| i.class_label == "chair").count() >= 2);
    }

    #[test]
    fn unreachable_service_is_unavailable() {
        let profile = ServiceProfile { base_url: "http://127.0.0.1:1".into(), timeout_s: 2.0 };
        let seg = HttpSegmenter { profile };
        assert!(matches!(seg.segment(&RgbImage::new(2, 2)), Err(SegmentationError::ServiceUnavailable(_))));
    }
}
