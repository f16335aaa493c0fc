//! Parametric synthetic glans images with exact landmark ground truth.
//!
//! Local frame: `u` across the glans, `v` along it (positive toward the
//! shaft). The glans is the ellipse `(u/a)² + (v/b)² ≤ 1`, placed at
//! `center` and rotated by `orientation`.

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{save_manifest, ImageRecord, ManifestError, Qc, Source};
use crate::geometry::{Affine2, BoundingBox, Frame, LandmarkSet, Point2};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic parameters: {0}")]
    InvalidParams(String),
}

/// Number of background texture families.
pub const TEXTURES: u8 = 4;

/// Radial position of C and C' relative to the glans outline.
const CORONA_RADIUS: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub canvas_width: u32,
    pub canvas_height: u32,
    pub center: Point2<f64>,
    /// Semi-axis across the glans, pixels.
    pub axis_u: f64,
    /// Semi-axis along the glans, pixels.
    pub axis_v: f64,
    /// Radians, clockwise on screen.
    pub orientation: f64,
    /// |u| of B and B' as fractions of `axis_u`.
    pub plate_half_left: f64,
    pub plate_half_right: f64,
    /// v of B and B' as a fraction of `axis_v`.
    pub plate_depth: f64,
    /// A sits at v = -meatal_offset * axis_v.
    pub meatal_offset: f64,
    /// Angles (radians below the u axis) of C and C' on the corona.
    pub corona_left: f64,
    pub corona_right: f64,
    pub skin_tone: [u8; 3],
    pub texture: u8,
    pub illumination: f64,
    pub rng_seed: u64,
}

impl SynthParams {
    /// Random parameters with the whole glans inside the canvas.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, canvas_width: u32, canvas_height: u32) -> Self {
        let side = canvas_width.min(canvas_height) as f64;
        let axis_u = rng.random_range(0.14..0.26) * side;
        let axis_v = axis_u * rng.random_range(0.95..1.35);
        let orientation = rng.random_range(-0.4..0.4);
        let (hx, hy) = half_extents(axis_u, axis_v, orientation);
        let margin = 4.0;
        let cx = rng.random_range(hx + margin..canvas_width as f64 - hx - margin);
        let cy = rng.random_range(hy + margin..canvas_height as f64 - hy - margin);
        let plate = rng.random_range(0.2..0.42);
        let corona = rng.random_range(0.5..0.85);
        let r = rng.random_range(150.0..240.0);
        let g = r * rng.random_range(0.6..0.8);
        let b = g * rng.random_range(0.7..0.95);
        Self {
            canvas_width,
            canvas_height,
            center: Point2::new(cx, cy),
            axis_u,
            axis_v,
            orientation,
            plate_half_left: plate + rng.random_range(-0.04..0.04),
            plate_half_right: plate + rng.random_range(-0.04..0.04),
            plate_depth: rng.random_range(-0.05..0.35),
            meatal_offset: rng.random_range(0.35..0.75),
            corona_left: corona + rng.random_range(-0.06..0.06),
            corona_right: corona + rng.random_range(-0.06..0.06),
            skin_tone: [r as u8, g as u8, b as u8],
            texture: rng.random_range(0..TEXTURES),
            illumination: rng.random_range(0.7..1.3),
            rng_seed: rng.random(),
        }
    }

    fn local_to_image(&self, u: f64, v: f64) -> Point2<f64> {
        let (s, c) = self.orientation.sin_cos();
        Point2::new(self.center.x + c * u - s * v, self.center.y + s * u + c * v)
    }

    fn image_to_local(&self, p: Point2<f64>) -> (f64, f64) {
        let (s, c) = self.orientation.sin_cos();
        let (dx, dy) = (p.x - self.center.x, p.y - self.center.y);
        (c * dx + s * dy, -s * dx + c * dy)
    }

    fn local_landmarks(&self) -> [(f64, f64); 5] {
        let (a, b) = (self.axis_u, self.axis_v);
        let vb = self.plate_depth * b;
        [
            (0.0, -self.meatal_offset * b),
            (-self.plate_half_left * a, vb),
            (self.plate_half_right * a, vb),
            (
                -CORONA_RADIUS * a * self.corona_left.cos(),
                CORONA_RADIUS * b * self.corona_left.sin(),
            ),
            (
                CORONA_RADIUS * a * self.corona_right.cos(),
                CORONA_RADIUS * b * self.corona_right.sin(),
            ),
        ]
    }

    /// Exact landmark positions in the original frame.
    pub fn landmarks(&self) -> LandmarkSet<f64> {
        LandmarkSet::from_points(
            self.local_landmarks().map(|(u, v)| self.local_to_image(u, v)),
            Frame::Original,
        )
    }

    /// Tight box of the glans ellipse.
    pub fn glans_box(&self) -> BoundingBox<f64> {
        let (hx, hy) = half_extents(self.axis_u, self.axis_v, self.orientation);
        BoundingBox::from_center(self.center.x, self.center.y, 2.0 * hx, 2.0 * hy, 1.0)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidParams(m.to_string()));
        let finite = [
            self.axis_u,
            self.axis_v,
            self.orientation,
            self.plate_half_left,
            self.plate_half_right,
            self.plate_depth,
            self.meatal_offset,
            self.corona_left,
            self.corona_right,
            self.illumination,
        ];
        if finite.iter().any(|v| !v.is_finite()) || !self.center.is_finite() {
            return bad("non-finite parameter");
        }
        if self.canvas_width == 0 || self.canvas_height == 0 {
            return bad("empty canvas");
        }
        if self.axis_u < 2.0 || self.axis_v < 2.0 {
            return bad("glans axes below 2 px");
        }
        if self.plate_half_left <= 0.0 || self.plate_half_right <= 0.0 {
            return bad("plate width must be positive");
        }
        if !(0.0..FRAC_PI_2).contains(&self.corona_left) || !(0.0..FRAC_PI_2).contains(&self.corona_right) {
            return bad("corona angles must lie in [0, pi/2)");
        }
        if self.meatal_offset <= 0.0 || self.illumination <= 0.0 {
            return bad("meatal offset and illumination must be positive");
        }
        for (u, v) in self.local_landmarks() {
            if (u / self.axis_u).powi(2) + (v / self.axis_v).powi(2) >= 1.0 {
                return bad("landmark outside the glans");
            }
        }
        let lm = self.landmarks();
        let min_edge = 1.0;
        if lm.glanular_diameter() < min_edge || lm.b.distance(lm.c) < min_edge || lm.b_prime.distance(lm.c_prime) < min_edge
        {
            return bad("degenerate landmark edges");
        }
        let g = self.glans_box();
        if g.x_min < 0.0
            || g.y_min < 0.0
            || g.x_max > (self.canvas_width - 1) as f64
            || g.y_max > (self.canvas_height - 1) as f64
        {
            return bad("glans exceeds the canvas");
        }
        Ok(())
    }

    /// Parameters of the same glans after a similarity `affine`. Reflections
    /// mirror the local frame, so left and right parameters swap.
    pub fn transformed(&self, affine: &Affine2<f64>) -> Self {
        let m = affine.m;
        let s = affine.linear_scale();
        let alpha = (-m[0][1]).atan2(m[1][1]);
        let mut out = self.clone();
        out.center = affine.apply(self.center);
        out.axis_u = self.axis_u * s;
        out.axis_v = self.axis_v * s;
        if affine.determinant() >= 0.0 {
            out.orientation = self.orientation + alpha;
        } else {
            out.orientation = alpha - self.orientation;
            std::mem::swap(&mut out.plate_half_left, &mut out.plate_half_right);
            std::mem::swap(&mut out.corona_left, &mut out.corona_right);
        }
        out
    }

    /// Normalised ellipse radius of a point (1 on the outline).
    fn radius(&self, p: Point2<f64>) -> f64 {
        let (u, v) = self.image_to_local(p);
        ((u / self.axis_u).powi(2) + (v / self.axis_v).powi(2)).sqrt()
    }
}

fn half_extents(a: f64, b: f64, theta: f64) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (((a * c).powi(2) + (b * s).powi(2)).sqrt(), ((a * s).powi(2) + (b * c).powi(2)).sqrt())
}

fn smooth_edge(signed_dist: f64) -> f64 {
    (0.5 - signed_dist).clamp(0.0, 1.0)
}

fn segment_distance(p: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.x * ab.x + ab.y * ab.y;
    let t = if len2 > 0.0 {
        (((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.distance(a + ab * t)
}

/// Signed distance to triangle `t` (negative inside).
fn triangle_distance(p: Point2<f64>, t: [Point2<f64>; 3]) -> f64 {
    let edge = |a: Point2<f64>, b: Point2<f64>| (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    let signs = [edge(t[0], t[1]), edge(t[1], t[2]), edge(t[2], t[0])];
    let inside = signs.iter().all(|s| *s >= 0.0) || signs.iter().all(|s| *s <= 0.0);
    let d = segment_distance(p, t[0], t[1])
        .min(segment_distance(p, t[1], t[2]))
        .min(segment_distance(p, t[2], t[0]));
    if inside {
        -d
    } else {
        d
    }
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn shade(c: [f64; 3], k: f64) -> [f64; 3] {
    c.map(|v| v * k)
}

struct Background {
    texture: u8,
    c0: [f64; 3],
    c1: [f64; 3],
    period: f64,
    angle: f64,
    waves: [(f64, f64, f64); 4],
}

impl Background {
    fn new(texture: u8, rng: &mut ChaCha8Rng) -> Self {
        let mut colour = || [0; 3].map(|_: i32| rng.random_range(20.0..235.0));
        let c0 = colour();
        let c1 = colour();
        Self {
            texture,
            c0,
            c1,
            period: rng.random_range(8.0..40.0),
            angle: rng.random_range(0.0..std::f64::consts::PI),
            waves: [0; 4].map(|_| {
                (
                    rng.random_range(0.01..0.08),
                    rng.random_range(0.01..0.08),
                    rng.random_range(0.0..6.3),
                )
            }),
        }
    }

    fn at(&self, x: f64, y: f64, h: f64) -> [f64; 3] {
        let t = match self.texture {
            0 => y / h,
            1 => {
                let d = x * self.angle.cos() + y * self.angle.sin();
                0.5 + 0.5 * (d * std::f64::consts::TAU / self.period).sin()
            }
            2 => {
                let (i, j) = ((x / self.period).floor() as i64, (y / self.period).floor() as i64);
                ((i + j).rem_euclid(2)) as f64
            }
            _ => {
                let s: f64 = self.waves.iter().map(|(fx, fy, ph)| (fx * x + fy * y + ph).sin()).sum();
                0.5 + s / 8.0
            }
        };
        mix(self.c0, self.c1, t.clamp(0.0, 1.0))
    }
}

/// A rendered sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub params: SynthParams,
    pub image: RgbImage,
    pub landmarks: LandmarkSet<f64>,
    pub gt_box: BoundingBox<f64>,
}

impl SynthSample {
    pub fn record(&self, image_id: impl Into<String>, path: impl Into<std::path::PathBuf>) -> ImageRecord {
        ImageRecord {
            image_id: image_id.into(),
            path: path.into(),
            width: self.params.canvas_width,
            height: self.params.canvas_height,
            gt_box: self.gt_box,
            landmarks: self.landmarks,
            qc: Qc::accepted(),
            source: Source::Synthetic,
        }
    }
}

/// Pixels inside the glans outline, row-major.
pub fn glans_mask(params: &SynthParams) -> Vec<bool> {
    let (w, h) = (params.canvas_width, params.canvas_height);
    (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| params.radius(Point2::new(x as f64, y as f64)) <= 1.0)
        .collect()
}

/// Renders the glans, urethral plate, meatus, corona and shaft over a
/// textured background. Deterministic in `params`.
pub fn synth_generate(params: &SynthParams) -> Result<SynthSample, SynthError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let background = Background::new(params.texture % TEXTURES, &mut rng);
    let lm = params.landmarks();
    let (a, b) = (params.axis_u, params.axis_v);
    let unit = a.min(b);
    let skin = params.skin_tone.map(|v| v as f64);
    let glans_tone = [skin[0] * 1.05 + 20.0, skin[1] * 0.85, skin[2] * 0.9];
    let plate_tone = shade(glans_tone, 1.18);
    let dark = shade(glans_tone, 0.45);
    let shaft_tone = shade(skin, 0.85);
    let plate_base = Point2::new((lm.b.x + lm.b_prime.x) / 2.0, (lm.b.y + lm.b_prime.y) / 2.0);
    let (_, vc_left) = params.image_to_local(lm.c);
    let (_, vc_right) = params.image_to_local(lm.c_prime);
    let corona_v = vc_left.min(vc_right);
    let shaft_half = CORONA_RADIUS * a * (params.corona_left.cos() + params.corona_right.cos()) / 2.0;
    let (w, h) = (params.canvas_width, params.canvas_height);
    let mut image = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let p = Point2::new(x as f64, y as f64);
            let (u, v) = params.image_to_local(p);
            let mut c = background.at(p.x, p.y, h as f64);
            // shaft below the corona
            let shaft = smooth_edge(u.abs() - shaft_half).min(smooth_edge(corona_v - v));
            c = mix(c, shade(shaft_tone, 1.0 - 0.2 * (u / shaft_half).powi(2).min(1.0)), shaft);
            let r = params.radius(p);
            let glans = smooth_edge((r - 1.0) * unit);
            if glans > 0.0 {
                let mut g = shade(glans_tone, 1.0 - 0.25 * r * r);
                let plate = smooth_edge(triangle_distance(p, [lm.a, lm.b, lm.b_prime]));
                g = mix(g, plate_tone, plate * 0.9);
                let slit = smooth_edge(segment_distance(p, lm.a, plate_base) - 0.04 * unit);
                g = mix(g, dark, slit * 0.8);
                let meatus = smooth_edge(p.distance(lm.a) - 0.07 * unit);
                g = mix(g, shade(dark, 0.6), meatus);
                if v >= corona_v - 0.05 * b {
                    let band = smooth_edge((r - 0.96).abs() * unit - 0.03 * unit);
                    g = mix(g, dark, band * 0.85);
                }
                for knob in [lm.b, lm.b_prime] {
                    g = mix(g, shade(plate_tone, 0.7), smooth_edge(p.distance(knob) - 0.05 * unit));
                }
                for knob in [lm.c, lm.c_prime] {
                    g = mix(g, shade(dark, 0.5), smooth_edge(p.distance(knob) - 0.06 * unit));
                }
                c = mix(c, g, glans);
            }
            let noise = rng.random_range(-4.0..4.0);
            image.put_pixel(
                x,
                y,
                Rgb(c.map(|v| (v * params.illumination + noise).round().clamp(0.0, 255.0) as u8)),
            );
        }
    }
    Ok(SynthSample {
        params: params.clone(),
        image,
        landmarks: lm,
        gt_box: params.glans_box(),
    })
}

/// Parameter seed of sample `index` in a dataset drawn with `seed`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64)
}

/// Sample `index` of the dataset drawn with `seed`, redrawing parameters
/// until they validate.
pub fn synth_sample(seed: u64, index: usize, canvas_width: u32, canvas_height: u32) -> SynthSample {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, index));
    loop {
        let params = SynthParams::sample(&mut rng, canvas_width, canvas_height);
        if let Ok(s) = synth_generate(&params) {
            return s;
        }
    }
}

/// Renders `count` samples to `out_dir` as PNGs plus `manifest.jsonl`.
pub fn synth_dataset(
    count: usize,
    seed: u64,
    canvas: (u32, u32),
    out_dir: impl AsRef<Path>,
) -> Result<Vec<ImageRecord>, ManifestError> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let s = synth_sample(seed, i, canvas.0, canvas.1);
        let name = format!("synth_{i:05}.png");
        s.image
            .save(out_dir.join(&name))
            .map_err(|e| ManifestError::Io(std::io::Error::other(e)))?;
        records.push(s.record(format!("synth_{i:05}"), name));
    }
    save_manifest(out_dir.join("manifest.jsonl"), &records)?;
    Ok(records)
}
