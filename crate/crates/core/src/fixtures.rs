//! Authored test material: LLM replies, a hand-labeled environment with
//! its segmentation, synthetic webcam frames and image priors.
//!
//! Everything here is procedural and deterministic so tests, the book and
//! the offline server mode all see identical pixels.

use std::sync::Arc;

use image::{GrayImage, Luma, Rgb, RgbImage, Rgba, RgbaImage};

use crate::prompt::{base_prompt, MockLlm};
use crate::scene::NormRect;
use crate::segmentation::{fill_rect_mask, Instance, MockSegmenter};

/// Reply for ("brainstorming session", "mushroom forest"), in the loose
/// pseudo-JSON a chat model tends to emit.
pub const MUSHROOM_FOREST_REPLY: &str = "{\n  Objects: \"Giant mushrooms, Fairy houses, Moss-covered rocks, Glowing mushrooms, Enchanted flowers\",\n  Environment Characteristics\": \"Enchanting, Magical, Misty, Whimsical, Serene\"\n}";

/// The prompt that reply must assemble into.
pub const MUSHROOM_FOREST_PROMPT: &str = "Mushroom forest-themed environment for a brainstorming session; Giant mushrooms, Fairy houses, Moss-covered rocks, Glowing mushrooms, Enchanted flowers; Enchanting, Magical, Misty, Whimsical, Serene; highly detailed, intricate, sharp focus, smooth";

/// Reply for ("Brainstorming Session", "Hologram").
pub const HOLOGRAM_REPLY: &str = "{Objects: \"Interactive Touchscreens, Holographic Whiteboards Floating Desks\", Environment Characteristics: \"Dynamic Lighting Effects, Seamless Integration of Virtual and Physical Elements, Collaborative and Hi-tech Atmosphere\"}";

/// (activity, theme, reply) triples known to [`fixture_llm`].
pub const LLM_FIXTURES: &[(&str, &str, &str)] = &[
    ("brainstorming session", "mushroom forest", MUSHROOM_FOREST_REPLY),
    ("Brainstorming Session", "Hologram", HOLOGRAM_REPLY),
    (
        "brainstorming",
        "",
        "Here is a suggestion:\n{\"Objects\": \"whiteboards, sticky notes, plants, chairs, small tables\", \"Environment Characteristics\": \"bright, open space, natural light, refreshing atmosphere, varied textures\"}",
    ),
    (
        "brainstorming",
        "design studio with sketches of prototypes",
        "{Objects: \"drafting tables, pinned sketches, prototype models, desk lamps, stools\", Environment Characteristics: \"creative, airy, daylight, organized clutter, modern\"}",
    ),
    (
        "seminar discussion",
        "library",
        "{Objects: \"bookshelves, reading tables, wooden chairs, brass lamps, globes\", Environment Characteristics: \"scholarly, warm lighting, quiet, polished wood, classic\"}",
    ),
    (
        "storytelling",
        "",
        "{Objects: \"castle towers, banners, lanterns, cobblestone paths, rose bushes\", Environment Characteristics: \"fairytale, golden hour, whimsical, soft colors, dreamy\"}",
    ),
    (
        "storytelling",
        "magic castle, ballroom",
        "{Objects: \"chandeliers, marble columns, grand staircase, velvet curtains, thrones\", Environment Characteristics: \"regal, sparkling, warm candlelight, ornate, enchanting\"}",
    ),
    (
        "storytelling",
        "mushroom forest",
        "{Objects: \"Giant mushrooms, Fairy houses, Moss-covered rocks, Glowing mushrooms, Enchanted flowers\", Environment Characteristics: \"Enchanting, Magical, Misty, Whimsical, Serene\"}",
    ),
];

/// Mock LLM loaded with [`LLM_FIXTURES`]. Unknown requests fail, which
/// exercises the local fallback.
pub fn fixture_llm() -> MockLlm {
    LLM_FIXTURES.iter().fold(MockLlm::new(), |llm, (activity, theme, reply)| {
        let base = base_prompt(activity, theme).expect("fixtures have nonempty prompts");
        llm.with_response(&base, *reply)
    })
}

/// Chair silhouettes in the library fixture, as (back, seat) rects.
pub const LIBRARY_CHAIRS: [(NormRect, NormRect); 2] = [
    (NormRect { cx: 0.28, cy: 0.66, w: 0.12, h: 0.2 }, NormRect { cx: 0.28, cy: 0.8, w: 0.16, h: 0.08 }),
    (NormRect { cx: 0.72, cy: 0.66, w: 0.12, h: 0.2 }, NormRect { cx: 0.72, cy: 0.8, w: 0.16, h: 0.08 }),
];

pub const LIBRARY_TABLE: NormRect = NormRect { cx: 0.5, cy: 0.86, w: 0.3, h: 0.1 };

/// A row of books on the shelf: detected, but not an occluder class.
pub const LIBRARY_BOOKS: NormRect = NormRect { cx: 0.5, cy: 0.2, w: 0.5, h: 0.08 };

/// A floor lamp the detector is unsure about, labeled as a chair.
pub const LIBRARY_UNSURE: NormRect = NormRect { cx: 0.92, cy: 0.7, w: 0.05, h: 0.3 };

fn union_mask(w: u32, h: u32, rects: &[NormRect]) -> GrayImage {
    let mut out = GrayImage::new(w, h);
    for r in rects {
        let m = fill_rect_mask(w, h, r);
        for (o, v) in out.pixels_mut().zip(m.pixels()) {
            o[0] = o[0].max(v[0]);
        }
    }
    out
}

fn paint(img: &mut RgbImage, mask: &GrayImage, color: [u8; 3]) {
    for (px, m) in img.pixels_mut().zip(mask.pixels()) {
        if m[0] > 0 {
            *px = Rgb(color);
        }
    }
}

/// A procedural library: paneled wall with shelves, wooden floor, two
/// chairs and a reading table.
pub fn library_environment(w: u32, h: u32) -> RgbImage {
    let mut img = RgbImage::from_fn(w, h, |x, y| {
        let fy = y as f64 / h as f64;
        if fy < 0.55 {
            let panel = if (x * 8 / w.max(1)) % 2 == 0 { 0 } else { 10 };
            Rgb([150 + panel, 110 + panel, 70])
        } else {
            let plank = ((y * 24 / h.max(1)) % 2) as u8 * 12;
            Rgb([120 + plank, 80 + plank, 50])
        }
    });
    let shelf = fill_rect_mask(w, h, &NormRect::new(0.5, 0.25, 0.7, 0.4));
    paint(&mut img, &shelf, [90, 55, 30]);
    let books = fill_rect_mask(w, h, &LIBRARY_BOOKS);
    for (x, y, px) in img.enumerate_pixels_mut() {
        if books.get_pixel(x, y)[0] > 0 {
            let spine = (x * 40 / w.max(1)) % 4;
            *px = [Rgb([160, 30, 30]), Rgb([30, 90, 140]), Rgb([200, 170, 60]), Rgb([40, 110, 60])][spine as usize];
        }
    }
    paint(&mut img, &fill_rect_mask(w, h, &LIBRARY_UNSURE), [60, 60, 60]);
    for (back, seat) in LIBRARY_CHAIRS {
        paint(&mut img, &union_mask(w, h, &[back, seat]), [70, 35, 20]);
    }
    paint(&mut img, &fill_rect_mask(w, h, &LIBRARY_TABLE), [110, 60, 25]);
    img
}

/// Hand-labeled instances for [`library_environment`]: two chairs and a
/// table that survive the default filter, plus a non-occluder class and a
/// low-confidence detection that do not.
pub fn library_instances(w: u32, h: u32) -> Vec<Instance> {
    let inst = |label: &str, mask: GrayImage, confidence: f64| Instance {
        class_label: label.into(),
        mask: Arc::new(mask),
        confidence,
    };
    let [(b0, s0), (b1, s1)] = LIBRARY_CHAIRS;
    vec![
        inst("book", fill_rect_mask(w, h, &LIBRARY_BOOKS), 0.95),
        inst("chair", union_mask(w, h, &[b0, s0]), 0.91),
        inst("chair", union_mask(w, h, &[b1, s1]), 0.88),
        inst("chair", fill_rect_mask(w, h, &LIBRARY_UNSURE), 0.31),
        inst("table", fill_rect_mask(w, h, &LIBRARY_TABLE), 0.83),
    ]
}

/// Mock segmenter that knows the library fixture at `w`×`h` and falls back
/// to the procedural layout for everything else.
pub fn library_segmenter(w: u32, h: u32) -> MockSegmenter {
    MockSegmenter::procedural().with_fixture(&library_environment(w, h), library_instances(w, h))
}

/// Person silhouette: ellipse head over a rounded torso reaching the
/// bottom edge. 255 inside.
pub fn person_alpha(w: u32, h: u32) -> GrayImage {
    let (fw, fh) = (w as f64, h as f64);
    GrayImage::from_fn(w, h, |x, y| {
        let (px, py) = ((x as f64 + 0.5) / fw, (y as f64 + 0.5) / fh);
        let head = ((px - 0.5) / 0.12).powi(2) + ((py - 0.35) / 0.16).powi(2) <= 1.0;
        let torso = py >= 0.55 && ((px - 0.5) / 0.3).powi(2) + ((py - 1.05) / 0.5).powi(2) <= 1.0;
        Luma([if head || torso { 255 } else { 0 }])
    })
}

/// A webcam frame: a two-tone room behind a person. Alpha carries the
/// person matte.
pub fn webcam_frame(w: u32, h: u32, wall: [u8; 3], shirt: [u8; 3]) -> RgbaImage {
    let alpha = person_alpha(w, h);
    RgbaImage::from_fn(w, h, |x, y| {
        let a = alpha.get_pixel(x, y)[0];
        if a > 0 {
            let skin = (y as f64) < 0.52 * h as f64;
            let [r, g, b] = if skin { [224, 172, 140] } else { shirt };
            return Rgba([r, g, b, a]);
        }
        let fy = y as f64 / h as f64;
        let shade = (x * 30 / w.max(1)) as u8;
        let [r, g, b] = wall;
        if fy > 0.8 {
            Rgba([r / 2, g / 2, b / 2, 0])
        } else {
            Rgba([r.saturating_sub(shade), g.saturating_sub(shade), b.saturating_sub(shade), 0])
        }
    })
}

/// A frame with no person, e.g. a camera pointed at a desk.
pub fn desk_frame(w: u32, h: u32) -> RgbaImage {
    RgbaImage::from_fn(w, h, |x, y| {
        let fy = y as f64 / h as f64;
        let fx = x as f64 / w as f64;
        let notebook = (0.3..0.7).contains(&fx) && (0.45..0.85).contains(&fy);
        if notebook {
            let line = (y * 20 / h.max(1)) % 2 == 0;
            Rgba(if line { [240, 240, 235, 0] } else { [200, 210, 230, 0] })
        } else {
            Rgba([140, 100, 60, 0])
        }
    })
}

/// An image prior with `tables` tables in a row on a plain floor.
pub fn tables_prior(w: u32, h: u32, tables: u32) -> RgbaImage {
    let mut img = RgbImage::from_fn(w, h, |_, y| {
        if (y as f64) < 0.5 * h as f64 {
            Rgb([210, 205, 190])
        } else {
            Rgb([150, 140, 125])
        }
    });
    let n = tables.max(1);
    let span = 0.8 / n as f64;
    for i in 0..n {
        let cx = 0.1 + span * (i as f64 + 0.5);
        paint(&mut img, &fill_rect_mask(w, h, &NormRect::new(cx, 0.75, span * 0.8, 0.12)), [90, 60, 40]);
    }
    RgbaImage::from_fn(w, h, |x, y| {
        let Rgb([r, g, b]) = *img.get_pixel(x, y);
        Rgba([r, g, b, 255])
    })
}
