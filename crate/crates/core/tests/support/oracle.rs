//! Naive reference implementations used to cross-check the library.
//! Shared with the acceptance harness via `#[path]`.
#![allow(dead_code)]

use image::{Rgb, RgbImage, RgbaImage};
use rand::Rng;
use tableau_core::compositor::FeedFrames;
use tableau_core::scene::{FeedPlacement, NormRect, Scene};

fn flat_over(dst: f64, src: f64, alpha: f64) -> f64 {
    (src * alpha + dst * (255.0 - alpha)) / 255.0
}

/// Nearest source index for pixel `offset` of an `extent`-pixel span
/// stretched over `src_len` source pixels.
pub fn nearest(offset: i64, extent: i64, src_len: u32) -> u32 {
    let s = ((offset as f64 + 0.5) * src_len as f64 / extent as f64).floor();
    s.clamp(0.0, src_len as f64 - 1.0) as u32
}

/// Per-pixel live render: each canvas pixel walks every layer back to
/// front and blends in floating point, rounding once per blend.
pub fn live_render(scene: &Scene, frames: &FeedFrames) -> RgbaImage {
    let (w, h) = scene.canvas.render_dims();
    let mut feeds: Vec<&FeedPlacement> = scene.feeds.iter().collect();
    feeds.sort_by_key(|f| (f.z_rank, f.feed_id.clone()));
    RgbaImage::from_fn(w, h, |x, y| {
        let mut px = match &scene.environment {
            Some(env) => {
                let p = env.get_pixel(x, y);
                [p[0] as f64, p[1] as f64, p[2] as f64]
            }
            None => [128.0; 3],
        };
        for feed in &feeds {
            let r = tableau_core::to_pixels(&feed.rect, &scene.canvas);
            let (xi, yi) = (x as i64, y as i64);
            if r.w <= 0 || r.h <= 0 || xi < r.x || xi >= r.x + r.w || yi < r.y || yi >= r.y + r.h {
                continue;
            }
            let frame = &frames[&feed.feed_id];
            let (fw, fh) = frame.color.dimensions();
            let sx = nearest(xi - r.x, r.w, fw);
            let sy = nearest(yi - r.y, r.h, fh);
            let a = frame.person_alpha.get_pixel(sx, sy)[0] as f64;
            let c = frame.color.get_pixel(sx, sy);
            for i in 0..3 {
                px[i] = flat_over(px[i], c[i] as f64, a).round();
            }
        }
        if let Some(env) = &scene.environment {
            for obj in &scene.foreground {
                let a = obj.mask.get_pixel(x, y)[0] as f64;
                let c = env.get_pixel(x, y);
                for i in 0..3 {
                    px[i] = flat_over(px[i], c[i] as f64, a).round();
                }
            }
        }
        image::Rgba([px[0] as u8, px[1] as u8, px[2] as u8, 255])
    })
}

/// Expected mask value (255 generate, 0 keep) of one generation pixel:
/// kept iff the pixel lies in some feed's preserved core.
pub fn mask_value(scene: &Scene, x: u32, y: u32) -> u8 {
    let (gw, gh) = scene.canvas.gen_dims();
    let kept = scene.feeds.iter().any(|f| {
        let s = f.preservation.clamp(0.0, 1.0).sqrt();
        let core = NormRect::new(f.rect.cx, f.rect.cy, f.rect.w * s, f.rect.h * s);
        let r = core.to_pixels_on(gw, gh);
        let (xi, yi) = (x as i64, y as i64);
        r.w > 0 && r.h > 0 && xi >= r.x && xi < r.x + r.w && yi >= r.y && yi < r.y + r.h
    });
    if kept {
        0
    } else {
        255
    }
}

pub fn random_rgb(rng: &mut impl Rng, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
}

/// Count of pixels where two images differ.
pub fn diff_count(a: &RgbaImage, b: &RgbaImage) -> usize {
    a.pixels().zip(b.pixels()).filter(|(p, q)| p != q).count()
}

/// Discrete Laplace (Jacobi) solve of the hole with a fixed boundary,
/// run to a tight tolerance: the reference for blur-extend fills.
pub fn harmonic_fill(values: &[f64], hole: &[bool], w: usize, h: usize) -> Vec<f64> {
    let mut cur = values.to_vec();
    for _ in 0..20_000 {
        let mut next = cur.clone();
        let mut delta: f64 = 0.0;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if !hole[i] {
                    continue;
                }
                let mut sum = 0.0;
                let mut n = 0.0;
                for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                        sum += cur[ny as usize * w + nx as usize];
                        n += 1.0;
                    }
                }
                next[i] = sum / n;
                delta = delta.max((next[i] - cur[i]).abs());
            }
        }
        cur = next;
        if delta < 1e-9 {
            break;
        }
    }
    cur
}

/// Random scene of at most 64×64 with up to four feeds and three
/// foreground objects, plus matching frames.
pub fn random_scene(rng: &mut impl Rng) -> (Scene, FeedFrames) {
    use image::{GrayImage, Luma, Rgba};
    use std::sync::Arc;
    use tableau_core::scene::{Canvas, ForegroundObject, NormPoint};
    use tableau_core::segmentation::MattedFrame;

    let w = 8 * rng.random_range(1..=8u32);
    let h = 8 * rng.random_range(1..=8u32);
    let mut scene = Scene::new(Canvas { width_px: w, height_px: h, gen_width_px: w, gen_height_px: h });
    if rng.random_bool(0.7) {
        let env = RgbaImage::from_fn(w, h, |_, _| Rgba([rng.random(), rng.random(), rng.random(), 255]));
        scene.environment = Some(Arc::new(env));
    }
    let mut frames = FeedFrames::new();
    for i in 0..rng.random_range(0..=4) {
        let rect = NormRect::new(
            rng.random_range(-0.2..1.2),
            rng.random_range(-0.2..1.2),
            rng.random_range(0.05..1.0),
            rng.random_range(0.05..1.0),
        );
        let feed = FeedPlacement::new(format!("feed-{i}").as_str(), rect, rng.random_range(-3..=3) * 10 + i);
        let (fw, fh) = (rng.random_range(1..=24), rng.random_range(1..=24));
        let color = random_rgb(rng, fw, fh);
        let alpha = GrayImage::from_fn(fw, fh, |_, _| {
            Luma([match rng.random_range(0..4) {
                0 => 0,
                1 => 255,
                _ => rng.random(),
            }])
        });
        frames.insert(
            feed.feed_id.clone(),
            MattedFrame { background: color.clone(), color, person_alpha: alpha, low_confidence: false },
        );
        scene.feeds.push(feed);
    }
    if scene.environment.is_some() {
        for i in 0..rng.random_range(0..=3) {
            let mask = GrayImage::from_fn(w, h, |_, _| Luma([if rng.random_bool(0.3) { rng.random() } else { 0 }]));
            scene.foreground.push(ForegroundObject {
                object_id: format!("obj-{i}").as_str().into(),
                class_label: "chair".into(),
                mask: Arc::new(mask),
                bbox: NormRect::FULL,
                anchor: NormPoint::new(0.5, 0.5),
                occupied_by: None,
            });
        }
    }
    (scene, frames)
}
