//! Direct-manipulation transforms and automatic seating of feeds behind
//! foreground objects.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::raster::digest_gray;
use crate::scene::{FeedId, NormPoint, NormRect, ObjectId, Scene};

pub const MIN_EXTENT: f64 = 0.02;
pub const MAX_EXTENT: f64 = 2.0;
/// Seated feed width relative to the object's bbox width.
pub const SEAT_WIDTH_RATIO: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("unknown feed {0}")]
    UnknownFeed(FeedId),
    #[error("unknown object {0}")]
    UnknownObject(ObjectId),
    #[error("scale factor must be positive and finite, got {0}")]
    InvalidFactor(f64),
    #[error("scene has no foreground objects")]
    NoObjects,
    #[error("foreground objects changed since the assignment was computed")]
    StaleAssignment,
}

pub fn move_feed(scene: &Scene, feed_id: &FeedId, center: NormPoint) -> Result<Scene, LayoutError> {
    let mut next = scene.clone();
    let feed = next.feed_mut(feed_id).ok_or_else(|| LayoutError::UnknownFeed(feed_id.clone()))?;
    feed.rect.cx = center.x.clamp(0.0, 1.0);
    feed.rect.cy = center.y.clamp(0.0, 1.0);
    Ok(next)
}

/// Scales `rect` about its center, limiting the factor so both extents stay
/// within [`MIN_EXTENT`, `MAX_EXTENT`] and the aspect ratio is kept.
pub fn scale_rect(rect: &NormRect, factor: f64) -> NormRect {
    let hi = (MAX_EXTENT / rect.w).min(MAX_EXTENT / rect.h);
    let lo = (MIN_EXTENT / rect.w).max(MIN_EXTENT / rect.h);
    let f = factor.max(lo).min(hi);
    NormRect::new(rect.cx, rect.cy, rect.w * f, rect.h * f)
}

pub fn scale_feed(scene: &Scene, feed_id: &FeedId, factor: f64) -> Result<Scene, LayoutError> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(LayoutError::InvalidFactor(factor));
    }
    let mut next = scene.clone();
    let feed = next.feed_mut(feed_id).ok_or_else(|| LayoutError::UnknownFeed(feed_id.clone()))?;
    feed.rect = scale_rect(&feed.rect, factor);
    Ok(next)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeatPair {
    pub feed_id: FeedId,
    pub object_id: ObjectId,
    pub placement: NormRect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutAssignment {
    pub pairs: Vec<SeatPair>,
    /// Eligible feeds left over once every free object was taken.
    pub unassigned: Vec<FeedId>,
    /// Fingerprint of the object list the assignment was computed against.
    pub objects_digest: String,
}

impl LayoutAssignment {
    pub fn empty(scene: &Scene) -> Self {
        Self { pairs: Vec::new(), unassigned: Vec::new(), objects_digest: objects_digest(scene) }
    }
}

/// Fingerprint of the foreground objects, ignoring who occupies them.
pub fn objects_digest(scene: &Scene) -> String {
    let mut h = Sha256::new();
    for o in &scene.foreground {
        let row = serde_json::json!([o.object_id, o.class_label, o.bbox, o.anchor, digest_gray(&o.mask)]);
        h.update(row.to_string().as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Rect of a feed seated behind an object: width is
/// [`SEAT_WIDTH_RATIO`] of the object's bbox, the aspect ratio is the feed's
/// own, the center-x is the anchor and the bottom edge sits on the anchor.
pub fn seat_rect(feed: &NormRect, bbox: &NormRect, anchor: NormPoint) -> NormRect {
    let w = SEAT_WIDTH_RATIO * bbox.w;
    let h = w * feed.h / feed.w;
    let sized = scale_rect(&NormRect::new(0.0, 0.0, w, h), 1.0);
    NormRect::new(anchor.x, anchor.y - sized.h / 2.0, sized.w, sized.h)
}

/// Pairs free feeds with free objects left to right.
///
/// A feed is free when no object lists it in `occupied_by`; an object is
/// free when its `occupied_by` is empty.
pub fn auto_layout(scene: &Scene) -> Result<LayoutAssignment, LayoutError> {
    if scene.foreground.is_empty() {
        return Err(LayoutError::NoObjects);
    }
    let seated = |id: &FeedId| scene.foreground.iter().any(|o| o.occupied_by.as_ref() == Some(id));
    let mut feeds: Vec<_> = scene.feeds.iter().filter(|f| !seated(&f.feed_id)).collect();
    feeds.sort_by(|a, b| a.rect.cx.total_cmp(&b.rect.cx).then_with(|| a.feed_id.cmp(&b.feed_id)));
    let mut objects: Vec<_> = scene.foreground.iter().filter(|o| o.occupied_by.is_none()).collect();
    objects.sort_by(|a, b| a.anchor.x.total_cmp(&b.anchor.x).then_with(|| a.object_id.cmp(&b.object_id)));

    let pairs = feeds
        .iter()
        .zip(&objects)
        .map(|(f, o)| SeatPair {
            feed_id: f.feed_id.clone(),
            object_id: o.object_id.clone(),
            placement: seat_rect(&f.rect, &o.bbox, o.anchor),
        })
        .collect();
    let unassigned = feeds.iter().skip(objects.len()).map(|f| f.feed_id.clone()).collect();
    Ok(LayoutAssignment { pairs, unassigned, objects_digest: objects_digest(scene) })
}

pub fn apply_assignment(scene: &Scene, assignment: &LayoutAssignment) -> Result<Scene, LayoutError> {
    if assignment.objects_digest != objects_digest(scene) {
        return Err(LayoutError::StaleAssignment);
    }
    let mut next = scene.clone();
    for pair in &assignment.pairs {
        if !next.foreground.iter().any(|o| o.object_id == pair.object_id) {
            return Err(LayoutError::UnknownObject(pair.object_id.clone()));
        }
        let feed = next.feed_mut(&pair.feed_id).ok_or_else(|| LayoutError::UnknownFeed(pair.feed_id.clone()))?;
        feed.rect = pair.placement;
        for o in &mut next.foreground {
            if o.object_id == pair.object_id {
                o.occupied_by = Some(pair.feed_id.clone());
            } else if o.occupied_by.as_ref() == Some(&pair.feed_id) {
                o.occupied_by = None;
            }
        }
    }
    Ok(next)
}
