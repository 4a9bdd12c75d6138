//! Raster helpers shared by every pipeline stage: content digests, PNG
//! encode/decode, and the deterministic resampling used for generation
//! results and uploaded priors.

use std::io::Cursor;

use image::{GrayImage, ImageFormat, Luma, Rgb, RgbImage, Rgba, RgbaImage};
use sha2::{Digest as _, Sha256};

use crate::error::RasterError;

/// Hex-encoded SHA-256 over a raster's kind tag, dimensions and raw samples.
///
/// Digests are computed over decoded pixels, never over encoded bytes, so
/// re-encoding a PNG with a different compressor keeps its digest.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct RasterDigest(pub String);

impl RasterDigest {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for RasterDigest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn digest_parts(kind: &str, width: u32, height: u32, samples: &[u8]) -> RasterDigest {
    let mut hasher = Sha256::new();
    hasher.update(kind.as_bytes());
    hasher.update(width.to_le_bytes());
    hasher.update(height.to_le_bytes());
    hasher.update(samples);
    RasterDigest(hex::encode(hasher.finalize()))
}

pub fn digest_rgba(img: &RgbaImage) -> RasterDigest {
    digest_parts("rgba8", img.width(), img.height(), img.as_raw())
}

pub fn digest_rgb(img: &RgbImage) -> RasterDigest {
    digest_parts("rgb8", img.width(), img.height(), img.as_raw())
}

pub fn digest_gray(img: &GrayImage) -> RasterDigest {
    digest_parts("l8", img.width(), img.height(), img.as_raw())
}

/// SHA-256 of arbitrary bytes, hex encoded.
pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A stored raster: either a color image or a single-channel mask.
#[derive(Clone, Debug, PartialEq)]
pub enum Raster {
    Rgba(RgbaImage),
    Gray(GrayImage),
}

impl Raster {
    pub fn digest(&self) -> RasterDigest {
        match self {
            Raster::Rgba(img) => digest_rgba(img),
            Raster::Gray(img) => digest_gray(img),
        }
    }

    pub fn dimensions(&self) -> (u32, u32) {
        match self {
            Raster::Rgba(img) => img.dimensions(),
            Raster::Gray(img) => img.dimensions(),
        }
    }

    pub fn to_png(&self) -> Vec<u8> {
        match self {
            Raster::Rgba(img) => encode_png_rgba(img),
            Raster::Gray(img) => encode_png_gray(img),
        }
    }

    /// Decodes a PNG, keeping single-channel files as masks and widening
    /// everything else to RGBA.
    pub fn from_png(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| RasterError::Decode(e.to_string()))?;
        Ok(match img {
            image::DynamicImage::ImageLuma8(g) => Raster::Gray(g),
            other => Raster::Rgba(other.to_rgba8()),
        })
    }
}

fn encode(img: image::DynamicImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail for 8-bit buffers");
    out.into_inner()
}

pub fn encode_png_rgba(img: &RgbaImage) -> Vec<u8> {
    encode(image::DynamicImage::ImageRgba8(img.clone()))
}

pub fn encode_png_rgb(img: &RgbImage) -> Vec<u8> {
    encode(image::DynamicImage::ImageRgb8(img.clone()))
}

pub fn encode_png_gray(img: &GrayImage) -> Vec<u8> {
    encode(image::DynamicImage::ImageLuma8(img.clone()))
}

/// Decodes PNG or JPEG bytes (format sniffed from content).
pub fn decode_image(bytes: &[u8]) -> Result<image::DynamicImage, RasterError> {
    let format = image::guess_format(bytes).map_err(|e| RasterError::Decode(e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(RasterError::Decode(format!("unsupported format {format:?}")));
    }
    image::load_from_memory_with_format(bytes, format).map_err(|e| RasterError::Decode(e.to_string()))
}

pub fn decode_png_rgb(bytes: &[u8]) -> Result<RgbImage, RasterError> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map(|img| img.to_rgb8())
        .map_err(|e| RasterError::Decode(e.to_string()))
}

pub fn decode_png_gray(bytes: &[u8]) -> Result<GrayImage, RasterError> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map(|img| img.to_luma8())
        .map_err(|e| RasterError::Decode(e.to_string()))
}

pub fn rgb_to_rgba(img: &RgbImage) -> RgbaImage {
    RgbaImage::from_fn(img.width(), img.height(), |x, y| {
        let Rgb([r, g, b]) = *img.get_pixel(x, y);
        Rgba([r, g, b, 255])
    })
}

/// Drops alpha without premultiplying.
pub fn rgba_to_rgb(img: &RgbaImage) -> RgbImage {
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let Rgba([r, g, b, _]) = *img.get_pixel(x, y);
        Rgb([r, g, b])
    })
}

/// Integer Rec. 601 luma.
pub fn luminance(px: Rgb<u8>) -> u8 {
    let Rgb([r, g, b]) = px;
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

/// Source coordinate window for bilinear sampling with pixel-center alignment.
fn taps(dst: u32, src_len: u32, dst_len: u32) -> (u32, u32, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as u32;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

fn bilinear<const C: usize>(
    src_w: u32,
    src_h: u32,
    sample: impl Fn(u32, u32) -> [u8; C],
    dst_w: u32,
    dst_h: u32,
) -> Vec<[u8; C]> {
    let mut out = Vec::with_capacity((dst_w * dst_h) as usize);
    let cols: Vec<_> = (0..dst_w).map(|x| taps(x, src_w, dst_w)).collect();
    for y in 0..dst_h {
        let (y0, y1, fy) = taps(y, src_h, dst_h);
        for &(x0, x1, fx) in &cols {
            let (a, b, c, d) = (sample(x0, y0), sample(x1, y0), sample(x0, y1), sample(x1, y1));
            let mut px = [0u8; C];
            for ch in 0..C {
                let top = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
                let bottom = c[ch] as f64 * (1.0 - fx) + d[ch] as f64 * fx;
                px[ch] = round_half_up(top * (1.0 - fy) + bottom * fy).clamp(0.0, 255.0) as u8;
            }
            out.push(px);
        }
    }
    out
}

/// Bilinear resample with half-pixel centers, edge clamping and half-up
/// rounding. Identity when the dimensions already match.
pub fn resize_rgb(src: &RgbImage, width: u32, height: u32) -> RgbImage {
    if src.dimensions() == (width, height) {
        return src.clone();
    }
    let px = bilinear(src.width(), src.height(), |x, y| src.get_pixel(x, y).0, width, height);
    RgbImage::from_fn(width, height, |x, y| Rgb(px[(y * width + x) as usize]))
}

pub fn resize_rgba(src: &RgbaImage, width: u32, height: u32) -> RgbaImage {
    if src.dimensions() == (width, height) {
        return src.clone();
    }
    let px = bilinear(src.width(), src.height(), |x, y| src.get_pixel(x, y).0, width, height);
    RgbaImage::from_fn(width, height, |x, y| Rgba(px[(y * width + x) as usize]))
}

/// Nearest-neighbour resample for masks, so binary masks stay binary.
pub fn resize_gray_nearest(src: &GrayImage, width: u32, height: u32) -> GrayImage {
    if src.dimensions() == (width, height) {
        return src.clone();
    }
    GrayImage::from_fn(width, height, |x, y| {
        let sx = ((x as u64 * src.width() as u64) / width as u64) as u32;
        let sy = ((y as u64 * src.height() as u64) / height as u64) as u32;
        *src.get_pixel(sx, sy)
    })
}

/// Placement of a letterboxed image inside its target frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Letterbox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// Fits `src` inside `width`×`height` preserving aspect ratio, centered on
/// opaque black bars.
pub fn letterbox(src: &RgbaImage, width: u32, height: u32) -> (RgbaImage, Letterbox) {
    let (sw, sh) = src.dimensions();
    let scale = (width as f64 / sw as f64).min(height as f64 / sh as f64);
    let fit_w = (round_half_up(sw as f64 * scale) as u32).clamp(1, width);
    let fit_h = (round_half_up(sh as f64 * scale) as u32).clamp(1, height);
    let scaled = resize_rgba(src, fit_w, fit_h);
    let x = (width - fit_w) / 2;
    let y = (height - fit_h) / 2;
    let mut out = RgbaImage::from_pixel(width, height, Rgba([0, 0, 0, 255]));
    for (sx, sy, px) in scaled.enumerate_pixels() {
        let Rgba([r, g, b, _]) = *px;
        out.put_pixel(x + sx, y + sy, Rgba([r, g, b, 255]));
    }
    (out, Letterbox { x, y, width: fit_w, height: fit_h })
}

/// True when every sample of the mask is 0 or 255.
pub fn is_binary(mask: &GrayImage) -> bool {
    mask.pixels().all(|Luma([v])| *v == 0 || *v == 255)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_ignores_encoding() {
        let img = RgbaImage::from_fn(7, 5, |x, y| Rgba([x as u8, y as u8, 3, 255]));
        let png = encode_png_rgba(&img);
        let back = Raster::from_png(&png).unwrap();
        assert_eq!(back.digest(), digest_rgba(&img));
    }

    #[test]
    fn gray_png_stays_gray() {
        let mask = GrayImage::from_fn(4, 4, |x, _| Luma([if x < 2 { 0 } else { 255 }]));
        match Raster::from_png(&encode_png_gray(&mask)).unwrap() {
            Raster::Gray(g) => assert_eq!(g, mask),
            Raster::Rgba(_) => panic!("mask widened to rgba"),
        }
    }

    #[test]
    fn digests_separate_kinds() {
        let g = GrayImage::new(2, 2);
        let c = RgbImage::new(2, 2);
        assert_ne!(digest_gray(&g), digest_rgb(&c));
    }

    #[test]
    fn resize_constant_is_constant() {
        let src = RgbImage::from_pixel(13, 7, Rgb([40, 90, 200]));
        let up = resize_rgb(&src, 41, 23);
        assert!(up.pixels().all(|p| *p == Rgb([40, 90, 200])));
    }

    #[test]
    fn resize_upscale_by_two_interpolates() {
        let src = RgbImage::from_fn(2, 1, |x, _| if x == 0 { Rgb([0, 0, 0]) } else { Rgb([100, 100, 100]) });
        let up = resize_rgb(&src, 4, 1);
        // centers at -0.25, 0.25, 0.75, 1.25 in source space
        let row: Vec<u8> = (0..4).map(|x| up.get_pixel(x, 0)[0]).collect();
        assert_eq!(row, vec![0, 25, 75, 100]);
    }

    #[test]
    fn letterbox_wide_into_16x9() {
        let src = RgbaImage::from_pixel(100, 100, Rgba([255, 0, 0, 255]));
        let (out, lb) = letterbox(&src, 160, 90);
        assert_eq!(lb, Letterbox { x: 35, y: 0, width: 90, height: 90 });
        assert_eq!(*out.get_pixel(0, 0), Rgba([0, 0, 0, 255]));
        assert_eq!(*out.get_pixel(80, 45), Rgba([255, 0, 0, 255]));
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(decode_image(b"not an image").is_err());
    }

    #[test]
    fn luminance_extremes() {
        assert_eq!(luminance(Rgb([0, 0, 0])), 0);
        assert_eq!(luminance(Rgb([255, 255, 255])), 255);
    }
}
