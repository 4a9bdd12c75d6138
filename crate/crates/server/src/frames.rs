//! Per-feed frame mailboxes, updated by ingest independently of the
//! command queue.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use image::{DynamicImage, GrayImage, Luma, Rgba, RgbaImage};
use serde::Serialize;
use tableau_core::compositor::FeedFrames;
use tableau_core::raster::{self, digest_rgba, Raster, RasterDigest};
use tableau_core::scene::{FeedId, Scene};
use tableau_core::segmentation::{fill_occlusion, person_matte, FillStrategy, MattedFrame, MattingMethod};

use crate::backends::Backends;
use crate::config::OcclusionFill;
use crate::error::SessionError;
use crate::store::SharedStore;

/// Frames smaller than this on either side are rejected.
pub const MIN_FRAME_SIDE: u32 = 16;

#[derive(Clone, Debug)]
pub struct Participant {
    pub display_name: String,
    /// First frame, kept as the generation source.
    pub frozen: Option<Arc<MattedFrame>>,
    pub frozen_digest: Option<RasterDigest>,
    pub frozen_background_digest: Option<RasterDigest>,
    pub latest: Option<Arc<MattedFrame>>,
    pub latest_digest: Option<RasterDigest>,
    pub frames_received: u64,
}

impl Participant {
    pub fn new(display_name: impl Into<String>) -> Self {
        Self {
            display_name: display_name.into(),
            frozen: None,
            frozen_digest: None,
            frozen_background_digest: None,
            latest: None,
            latest_digest: None,
            frames_received: 0,
        }
    }

    pub fn view(&self, feed_id: &FeedId) -> ParticipantView {
        ParticipantView {
            feed_id: feed_id.clone(),
            display_name: self.display_name.clone(),
            frozen_digest: self.frozen_digest.clone(),
            latest_digest: self.latest_digest.clone(),
            frames_received: self.frames_received,
            low_confidence: self.frozen.as_ref().is_some_and(|f| f.low_confidence),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParticipantView {
    pub feed_id: FeedId,
    pub display_name: String,
    pub frozen_digest: Option<RasterDigest>,
    pub latest_digest: Option<RasterDigest>,
    pub frames_received: u64,
    pub low_confidence: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IngestAck {
    pub feed_id: FeedId,
    pub frame_index: u64,
    pub digest: RasterDigest,
    pub frozen_digest: RasterDigest,
    /// True when this frame became the frozen generation source.
    pub frozen_now: bool,
    pub low_confidence: bool,
}

#[derive(Clone, Debug, Default)]
pub struct FrameStore {
    inner: Arc<Mutex<BTreeMap<FeedId, Participant>>>,
}

impl FrameStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, BTreeMap<FeedId, Participant>> {
        self.inner.lock().expect("frame store poisoned")
    }

    pub fn register(&self, feed_id: FeedId, participant: Participant) {
        self.lock().insert(feed_id, participant);
    }

    pub fn get(&self, feed_id: &FeedId) -> Option<Participant> {
        self.lock().get(feed_id).cloned()
    }

    pub fn contains(&self, feed_id: &FeedId) -> bool {
        self.lock().contains_key(feed_id)
    }

    pub fn participants(&self) -> Vec<(FeedId, Participant)> {
        self.lock().iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn views(&self) -> Vec<ParticipantView> {
        self.lock().iter().map(|(k, v)| v.view(k)).collect()
    }

    /// Frozen frames of every participant that has sent one.
    pub fn frozen_frames(&self) -> FeedFrames {
        self.lock()
            .iter()
            .filter_map(|(k, v)| v.frozen.as_ref().map(|f| (k.clone(), (**f).clone())))
            .collect()
    }

    /// The frame each placed feed shows in the live render: the latest one
    /// for live feeds, the frozen one otherwise.
    pub fn render_frames(&self, scene: &Scene) -> FeedFrames {
        let map = self.lock();
        scene
            .feeds
            .iter()
            .filter_map(|feed| {
                let p = map.get(&feed.feed_id)?;
                let frame = if feed.live { p.latest.as_ref().or(p.frozen.as_ref()) } else { p.frozen.as_ref() };
                frame.map(|f| (feed.feed_id.clone(), (**f).clone()))
            })
            .collect()
    }
}

/// Decodes PNG or JPEG bytes, enforcing the minimum frame size.
pub fn decode_frame(bytes: &[u8]) -> Result<DynamicImage, SessionError> {
    let img = raster::decode_image(bytes).map_err(|e| SessionError::Decode(e.to_string()))?;
    if img.width() < MIN_FRAME_SIDE || img.height() < MIN_FRAME_SIDE {
        return Err(SessionError::Decode(format!(
            "frame is {}x{}, minimum is {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}",
            img.width(),
            img.height()
        )));
    }
    Ok(img)
}

/// Color plus person alpha as one RGBA raster.
pub fn frame_rgba(frame: &MattedFrame) -> RgbaImage {
    RgbaImage::from_fn(frame.color.width(), frame.color.height(), |x, y| {
        let c = frame.color.get_pixel(x, y);
        Rgba([c[0], c[1], c[2], frame.person_alpha.get_pixel(x, y)[0]])
    })
}

/// Inverse of [`frame_rgba`] given the stored background.
pub fn frame_from_parts(frame: &RgbaImage, background: &RgbaImage, low_confidence: bool) -> MattedFrame {
    MattedFrame {
        color: raster::rgba_to_rgb(frame),
        person_alpha: GrayImage::from_fn(frame.width(), frame.height(), |x, y| Luma([frame.get_pixel(x, y)[3]])),
        background: raster::rgba_to_rgb(background),
        low_confidence,
    }
}

fn fill_first_frame(frame: &mut MattedFrame, backends: &Backends) {
    let outcome = match backends.occlusion_fill {
        OcclusionFill::BlurExtend => fill_occlusion(&frame.color, &frame.person_alpha, &FillStrategy::BlurExtend),
        OcclusionFill::Backend => {
            match fill_occlusion(
                &frame.color,
                &frame.person_alpha,
                &FillStrategy::BackendInpaint(backends.generation.as_ref()),
            ) {
                Ok(o) => Ok(o),
                Err(err) => {
                    tracing::warn!(%err, "backend occlusion fill failed, using blur-extend");
                    fill_occlusion(&frame.color, &frame.person_alpha, &FillStrategy::BlurExtend).map(|mut o| {
                        o.low_confidence = true;
                        o
                    })
                }
            }
        }
    };
    match outcome {
        Ok(o) => {
            frame.background = o.background;
            frame.low_confidence = o.low_confidence;
        }
        Err(err) => {
            tracing::warn!(%err, "occlusion fill failed, keeping the raw frame");
            frame.low_confidence = true;
        }
    }
}

/// Decodes and mattes a frame and stores it as the feed's latest. The first
/// frame of a feed also has its occluded background filled and is frozen.
pub fn ingest_frame(
    frames: &FrameStore,
    store: &SharedStore,
    backends: &Backends,
    feed_id: &FeedId,
    bytes: &[u8],
) -> Result<IngestAck, SessionError> {
    let first = {
        let map = frames.lock();
        map.get(feed_id).ok_or_else(|| SessionError::UnknownFeed(feed_id.clone()))?.frozen.is_none()
    };
    let img = decode_frame(bytes)?;
    let (color, person_alpha) = person_matte(&img, &backends.matting)?;
    let mut frame = MattedFrame { background: color.clone(), color, person_alpha, low_confidence: false };
    if first {
        fill_first_frame(&mut frame, backends);
    }
    let rgba = frame_rgba(&frame);
    let digest = digest_rgba(&rgba);

    let mut map = frames.lock();
    let p = map.get_mut(feed_id).ok_or_else(|| SessionError::UnknownFeed(feed_id.clone()))?;
    let frame = Arc::new(frame);
    let frozen_now = first && p.frozen.is_none();
    if frozen_now {
        p.frozen_digest = Some(store.put(&Raster::Rgba(rgba)));
        p.frozen_background_digest = Some(store.put(&Raster::Rgba(raster::rgb_to_rgba(&frame.background))));
        p.frozen = Some(frame.clone());
    }
    p.latest = Some(frame.clone());
    p.latest_digest = Some(digest.clone());
    p.frames_received += 1;
    Ok(IngestAck {
        feed_id: feed_id.clone(),
        frame_index: p.frames_received - 1,
        digest,
        frozen_digest: p.frozen_digest.clone().expect("frozen after first ingest"),
        frozen_now,
        low_confidence: p.frozen.as_ref().is_some_and(|f| f.low_confidence),
    })
}

/// Mattes a frame with the configured method, without filling. Used by the
/// offline renderer.
pub fn matte_offline(img: &DynamicImage, method: &MattingMethod) -> Result<MattedFrame, SessionError> {
    let (color, person_alpha) = match person_matte(img, method) {
        Ok(parts) => parts,
        Err(tableau_core::SegmentationError::NoAlphaChannel) => {
            let color = img.to_rgb8();
            let alpha = GrayImage::from_pixel(color.width(), color.height(), Luma([255]));
            (color, alpha)
        }
        Err(e) => return Err(e.into()),
    };
    Ok(MattedFrame { background: color.clone(), color, person_alpha, low_confidence: false })
}

