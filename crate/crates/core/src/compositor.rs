//! Pure raster passes over a scene snapshot.
//!
//! The generation-input pass produces the init image and binary inpainting
//! mask at generation resolution. The live pass composites persons and
//! foreground cutouts over the environment at canvas resolution. Both are
//! deterministic: identical inputs give bit-identical rasters.

use std::collections::BTreeMap;
use std::sync::Arc;

use image::{GrayImage, Luma, Rgb, RgbImage, Rgba, RgbaImage};
use thiserror::Error;

use crate::raster::{resize_rgb, rgb_to_rgba, rgba_to_rgb};
use crate::scene::{FeedId, FeedPlacement, LayerRole, Mode, NormRect, PixelRect, Scene};
use crate::segmentation::MattedFrame;

/// Per-feed frames handed to the compositor, already matted.
pub type FeedFrames = BTreeMap<FeedId, MattedFrame>;

/// Mask value marking pixels the backend must synthesize.
pub const MASK_GENERATE: u8 = 255;
/// Mask value marking pixels the backend must keep.
pub const MASK_PRESERVE: u8 = 0;

/// Canvas fill used where no environment exists yet.
pub const NEUTRAL_GRAY: [u8; 3] = [128, 128, 128];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompositeError {
    #[error("no frame for feed {0}")]
    MissingFrame(FeedId),
    #[error("nothing to compose: no feeds and no environment")]
    EmptyScene,
    #[error("result is {found:?}, expected {expected:?}")]
    DimensionMismatch { expected: (u32, u32), found: (u32, u32) },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderPass {
    GenerationInput,
    LiveRender,
}

impl RenderPass {
    /// Layers drawn by the pass, back to front.
    pub fn layers(self) -> &'static [LayerRole] {
        match self {
            RenderPass::GenerationInput => &LayerRole::GENERATION_INPUT,
            RenderPass::LiveRender => &LayerRole::LIVE_RENDER,
        }
    }
}

/// The feed rect scaled about its center by `sqrt(preservation)` per axis,
/// so the preserved area is exactly `preservation` times the feed area.
pub fn preservation_rect(placement: &FeedPlacement) -> NormRect {
    let s = placement.preservation.clamp(0.0, 1.0).sqrt();
    placement.rect.scaled(s, s)
}

/// Generation input: init image and mask, both at generation resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationInput {
    pub init: RgbImage,
    pub mask: GrayImage,
}

impl GenerationInput {
    pub fn generate_pixel_count(&self) -> usize {
        self.mask.pixels().filter(|p| p[0] == MASK_GENERATE).count()
    }
}

/// Maps a destination pixel inside `rect` to the nearest source pixel of a
/// `src_w`×`src_h` frame stretched over that rect.
fn sample_coord(dst: i64, origin: i64, extent: i64, src_len: u32) -> u32 {
    let offset = dst - origin;
    let s = ((2 * offset + 1) * src_len as i64) / (2 * extent);
    s.clamp(0, src_len as i64 - 1) as u32
}

fn frame_for<'a>(frames: &'a FeedFrames, feed: &FeedPlacement) -> Result<&'a MattedFrame, CompositeError> {
    frames.get(&feed.feed_id).ok_or_else(|| CompositeError::MissingFrame(feed.feed_id.clone()))
}

/// Builds the init image and inpainting mask.
///
/// The base is neutral gray in webcam-inpaint mode and the current
/// environment in canvas mode. Each feed's person-free background is drawn
/// over its preserved region in z order; the mask is 0 there and 255
/// everywhere else.
pub fn build_generation_input(scene: &Scene, frames: &FeedFrames) -> Result<GenerationInput, CompositeError> {
    let (gw, gh) = scene.canvas.gen_dims();
    let mut init = match (scene.mode, &scene.environment) {
        (Mode::CanvasImg2Img, Some(env)) => resize_rgb(&rgba_to_rgb(env), gw, gh),
        (Mode::CanvasImg2Img, None) | (Mode::WebcamInpaint, _) => {
            if scene.feeds.is_empty() {
                return Err(CompositeError::EmptyScene);
            }
            RgbImage::from_pixel(gw, gh, Rgb(NEUTRAL_GRAY))
        }
    };
    let mut mask = GrayImage::from_pixel(gw, gh, Luma([MASK_GENERATE]));

    for feed in scene.feeds_by_z() {
        let frame = frame_for(frames, feed)?;
        let rect = feed.rect.to_pixels_on(gw, gh);
        let keep = preservation_rect(feed).to_pixels_on(gw, gh);
        if rect.w <= 0 || rect.h <= 0 {
            continue;
        }
        let (fw, fh) = frame.background.dimensions();
        let (x0, y0, x1, y1) = keep.clip(gw, gh);
        for y in y0..y1 {
            let sy = sample_coord(y as i64, rect.y, rect.h, fh);
            for x in x0..x1 {
                let sx = sample_coord(x as i64, rect.x, rect.w, fw);
                init.put_pixel(x, y, *frame.background.get_pixel(sx, sy));
                mask.put_pixel(x, y, Luma([MASK_PRESERVE]));
            }
        }
    }
    Ok(GenerationInput { init, mask })
}

/// Source-over of `src` with coverage `alpha` onto an opaque destination,
/// rounded to nearest.
#[inline]
pub fn over_channel(src: u8, alpha: u8, dst: u8) -> u8 {
    let a = alpha as u32;
    ((src as u32 * a + dst as u32 * (255 - a) + 127) / 255) as u8
}

fn over(dst: &mut Rgba<u8>, src: [u8; 3], alpha: u8) {
    for c in 0..3 {
        dst.0[c] = over_channel(src[c], alpha, dst.0[c]);
    }
    dst.0[3] = 255;
}

fn draw_person(out: &mut RgbaImage, rect: PixelRect, frame: &MattedFrame) {
    if rect.w <= 0 || rect.h <= 0 {
        return;
    }
    let (w, h) = out.dimensions();
    let (fw, fh) = frame.color.dimensions();
    let (x0, y0, x1, y1) = rect.clip(w, h);
    for y in y0..y1 {
        let sy = sample_coord(y as i64, rect.y, rect.h, fh);
        for x in x0..x1 {
            let sx = sample_coord(x as i64, rect.x, rect.w, fw);
            let alpha = frame.person_alpha.get_pixel(sx, sy)[0];
            if alpha > 0 {
                over(out.get_pixel_mut(x, y), frame.color.get_pixel(sx, sy).0, alpha);
            }
        }
    }
}

/// Live frame at canvas resolution: environment, then persons in ascending
/// z-rank, then foreground cutouts in list order.
pub fn render_live(scene: &Scene, frames: &FeedFrames) -> Result<RgbaImage, CompositeError> {
    let (w, h) = scene.canvas.render_dims();
    let [r, g, b] = NEUTRAL_GRAY;
    let mut out = match &scene.environment {
        Some(env) => {
            let mut base = (**env).clone();
            base.pixels_mut().for_each(|p| p.0[3] = 255);
            base
        }
        None => RgbaImage::from_pixel(w, h, Rgba([r, g, b, 255])),
    };

    for feed in scene.feeds_by_z() {
        let frame = frame_for(frames, feed)?;
        draw_person(&mut out, feed.rect.to_pixels_on(w, h), frame);
    }

    if let Some(env) = &scene.environment {
        for obj in &scene.foreground {
            for (x, y, m) in obj.mask.enumerate_pixels() {
                if m[0] > 0 && x < w && y < h {
                    let src = env.get_pixel(x, y);
                    over(out.get_pixel_mut(x, y), [src[0], src[1], src[2]], m[0]);
                }
            }
        }
    }
    Ok(out)
}

fn check_result_dims(scene: &Scene, result: &RgbImage) -> Result<(), CompositeError> {
    let expected = scene.canvas.gen_dims();
    if result.dimensions() != expected {
        return Err(CompositeError::DimensionMismatch { expected, found: result.dimensions() });
    }
    Ok(())
}

/// Installs a generation result as the new environment, bilinearly scaled
/// to canvas size. Foreground objects are dropped since their masks no
/// longer line up with the new pixels.
pub fn apply_generation_result(scene: &Scene, result: &RgbImage) -> Result<Scene, CompositeError> {
    check_result_dims(scene, result)?;
    let (w, h) = scene.canvas.render_dims();
    let mut next = scene.clone();
    next.environment = Some(Arc::new(rgb_to_rgba(&resize_rgb(result, w, h))));
    next.foreground.clear();
    Ok(next)
}

/// Like [`apply_generation_result`], but only pixels inside `region` are
/// taken from the result; the rest of the environment is kept.
pub fn apply_region_result(scene: &Scene, result: &RgbImage, region: &NormRect) -> Result<Scene, CompositeError> {
    let Some(env) = &scene.environment else {
        return apply_generation_result(scene, result);
    };
    check_result_dims(scene, result)?;
    let (w, h) = scene.canvas.render_dims();
    let upscaled = resize_rgb(result, w, h);
    let mut merged = (**env).clone();
    let (x0, y0, x1, y1) = region.to_pixels_on(w, h).clip(w, h);
    for y in y0..y1 {
        for x in x0..x1 {
            let Rgb([r, g, b]) = *upscaled.get_pixel(x, y);
            merged.put_pixel(x, y, Rgba([r, g, b, 255]));
        }
    }
    let mut next = scene.clone();
    next.environment = Some(Arc::new(merged));
    next.foreground.clear();
    Ok(next)
}
