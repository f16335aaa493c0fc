//! RGB image helpers: bilinear affine warps and network input tensors.
//!
//! Pixel `(i, j)` sits at coordinate `(i, j)`; warps sample the source at
//! the inverse-mapped destination pixel coordinate.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::geometry::{Affine2, Point2};

/// Per-channel input normalisation: `(v / 255 - MEAN) / STD`.
pub const MEAN: f32 = 0.5;
pub const STD: f32 = 0.25;

#[inline]
pub fn normalize(v: u8) -> f32 {
    normalize_f(v as f32)
}

#[inline]
fn normalize_f(v: f32) -> f32 {
    v * (1.0 / (255.0 * STD)) - MEAN / STD
}

pub fn load_rgb(path: impl AsRef<Path>) -> image::ImageResult<RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

pub fn decode_rgb(bytes: &[u8]) -> image::ImageResult<RgbImage> {
    Ok(image::load_from_memory(bytes)?.to_rgb8())
}

/// Bilinear sample with `fill` outside the image; returns channel values
/// in `[0, 255]`.
#[inline]
fn sample(src: &RgbImage, x: f32, y: f32, fill: [f32; 3]) -> [f32; 3] {
    let (w, h) = (src.width() as i64, src.height() as i64);
    if x <= -1.0 || y <= -1.0 || x >= w as f32 || y >= h as f32 {
        return fill;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let raw = src.as_raw();
    let px = |xi: i64, yi: i64| -> [f32; 3] {
        if xi < 0 || yi < 0 || xi >= w || yi >= h {
            fill
        } else {
            let o = ((yi * w + xi) * 3) as usize;
            [raw[o] as f32, raw[o + 1] as f32, raw[o + 2] as f32]
        }
    };
    let (p00, p10, p01, p11) = (px(x0, y0), px(x0 + 1, y0), px(x0, y0 + 1), px(x0 + 1, y0 + 1));
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = p00[c] + (p10[c] - p00[c]) * fx;
        let bottom = p01[c] + (p11[c] - p01[c]) * fx;
        out[c] = top + (bottom - top) * fy;
    }
    out
}

fn inverse(src_to_dst: &Affine2<f64>) -> Affine2<f64> {
    src_to_dst.invert().expect("warp affine must be invertible")
}

/// Warps `src` into an `out_w × out_h` image through `src_to_dst`.
pub fn warp_rgb(src: &RgbImage, src_to_dst: &Affine2<f64>, out_w: u32, out_h: u32, fill: Rgb<u8>) -> RgbImage {
    let inv = inverse(src_to_dst);
    let fill = fill.0.map(|v| v as f32);
    RgbImage::from_fn(out_w, out_h, |x, y| {
        let s = inv.apply(Point2::new(x as f64, y as f64));
        let v = sample(src, s.x as f32, s.y as f32, fill);
        Rgb(v.map(|c| c.round().clamp(0.0, 255.0) as u8))
    })
}

/// Warps `src` straight into a normalised CHW `f32` buffer of length
/// `3 * out_w * out_h`; outside pixels become 0 (mid-grey).
pub fn warp_to_tensor(src: &RgbImage, src_to_dst: &Affine2<f64>, out_w: usize, out_h: usize, out: &mut [f32]) {
    assert_eq!(out.len(), 3 * out_w * out_h, "output buffer length");
    let inv = inverse(src_to_dst);
    let grey = MEAN * 255.0;
    let plane = out_w * out_h;
    for y in 0..out_h {
        for x in 0..out_w {
            let s = inv.apply(Point2::new(x as f64, y as f64));
            let v = sample(src, s.x as f32, s.y as f32, [grey; 3]);
            let i = y * out_w + x;
            for c in 0..3 {
                out[c * plane + i] = normalize_f(v[c]);
            }
        }
    }
}

/// Normalised CHW tensor of the whole image.
pub fn to_tensor(img: &RgbImage) -> Vec<f32> {
    let plane = (img.width() * img.height()) as usize;
    let mut out = vec![0.0; 3 * plane];
    for (i, p) in img.pixels().enumerate() {
        for c in 0..3 {
            out[c * plane + i] = normalize(p.0[c]);
        }
    }
    out
}
