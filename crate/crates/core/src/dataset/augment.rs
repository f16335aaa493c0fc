use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ImageRecord;
use crate::geometry::{Affine2, BoundingBox, Landmark, LandmarkSet, Point2};
use crate::imaging;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AugmentError {
    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),
    #[error("landmark {0} left the frame")]
    LandmarkOutOfFrame(&'static str),
    #[error("no in-frame augmentation after {0} attempts")]
    Exhausted(usize),
}

/// One concrete geometric augmentation. Translation is a fraction of the
/// frame size per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub translate_x: f64,
    pub translate_y: f64,
    pub rotate_deg: f64,
    pub scale: f64,
    pub hflip: bool,
    pub rng_seed: u64,
}

impl AugmentSpec {
    pub fn identity() -> Self {
        Self {
            translate_x: 0.0,
            translate_y: 0.0,
            rotate_deg: 0.0,
            scale: 1.0,
            hflip: false,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: String| Err(AugmentError::InvalidSpec(m));
        if !(-30.0..=30.0).contains(&self.rotate_deg) {
            return bad(format!("rotation {} outside [-30, 30]", self.rotate_deg));
        }
        if !(0.75..=1.25).contains(&self.scale) {
            return bad(format!("scale {} outside [0.75, 1.25]", self.scale));
        }
        if !(self.translate_x.abs() <= 1.0 && self.translate_y.abs() <= 1.0) {
            return bad("translation beyond one frame".into());
        }
        Ok(())
    }
}

/// Sampling ranges for [`AugmentSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentRanges {
    pub translate_frac: f64,
    pub rotate_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub flip_prob: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            translate_frac: 0.1,
            rotate_deg: 30.0,
            scale_min: 0.75,
            scale_max: 1.25,
            flip_prob: 0.5,
        }
    }
}

impl AugmentRanges {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AugmentSpec {
        let t = self.translate_frac;
        AugmentSpec {
            translate_x: rng.random_range(-t..=t),
            translate_y: rng.random_range(-t..=t),
            rotate_deg: rng.random_range(-self.rotate_deg..=self.rotate_deg),
            scale: rng.random_range(self.scale_min..=self.scale_max),
            hflip: rng.random_bool(self.flip_prob),
            rng_seed: rng.random(),
        }
    }
}

/// Scale, rotate and translate about the frame centre, then mirror
/// horizontally if requested.
pub fn augment_affine(spec: &AugmentSpec, width: f64, height: f64) -> Affine2<f64> {
    let cx = (width - 1.0) / 2.0;
    let cy = (height - 1.0) / 2.0;
    let core = Affine2::translation(-cx, -cy)
        .then(&Affine2::scaling(spec.scale))
        .then(&Affine2::rotation(spec.rotate_deg.to_radians()))
        .then(&Affine2::translation(cx + spec.translate_x * width, cy + spec.translate_y * height));
    if spec.hflip {
        core.then(&Affine2::translation(-cx, 0.0))
            .then(&Affine2::mirror_x())
            .then(&Affine2::translation(cx, 0.0))
    } else {
        core
    }
}

/// Moves landmarks through `affine`; a mirrored affine also swaps the side
/// labels so B stays paired with C.
pub fn transform_landmarks(lm: &LandmarkSet<f64>, affine: &Affine2<f64>) -> LandmarkSet<f64> {
    let moved = lm.map(lm.frame, |p| affine.apply(p));
    if affine.determinant() < 0.0 {
        moved.swap_sides()
    } else {
        moved
    }
}

/// Axis-aligned extent of the box's inscribed ellipse after `affine`.
pub fn transform_box(b: &BoundingBox<f64>, affine: &Affine2<f64>) -> BoundingBox<f64> {
    let c = affine.apply(b.center());
    let (a, bb) = (b.width() / 2.0, b.height() / 2.0);
    let m = affine.m;
    let hw = ((m[0][0] * a).powi(2) + (m[0][1] * bb).powi(2)).sqrt();
    let hh = ((m[1][0] * a).powi(2) + (m[1][1] * bb).powi(2)).sqrt();
    BoundingBox::from_center(c.x, c.y, 2.0 * hw, 2.0 * hh, b.confidence)
}

/// Co-transforms the annotation without touching pixels. The new box is the
/// transformed inscribed ellipse grown to cover every landmark, clipped to
/// the frame.
pub fn augment_annotation(record: &ImageRecord, spec: &AugmentSpec) -> Result<(ImageRecord, Affine2<f64>), AugmentError> {
    spec.validate()?;
    let (w, h) = (record.width as f64, record.height as f64);
    let affine = augment_affine(spec, w, h);
    let landmarks = transform_landmarks(&record.landmarks, &affine);
    for (l, p) in Landmark::ALL.iter().zip(landmarks.points()) {
        if !record.in_bounds(p) {
            return Err(AugmentError::LandmarkOutOfFrame(l.key()));
        }
    }
    let ellipse = transform_box(&record.gt_box, &affine);
    let mut all: Vec<Point2<f64>> = ellipse.corners().to_vec();
    all.extend_from_slice(&landmarks.points());
    let gt_box = BoundingBox::enclosing(&all, 1.0).clip(w, h);
    Ok((
        ImageRecord {
            landmarks,
            gt_box,
            ..record.clone()
        },
        affine,
    ))
}

/// Warps the image and co-transforms the annotation.
pub fn augment(record: &ImageRecord, image: &RgbImage, spec: &AugmentSpec) -> Result<(ImageRecord, RgbImage), AugmentError> {
    let (out, affine) = augment_annotation(record, spec)?;
    let image = if *spec == AugmentSpec::identity() {
        image.clone()
    } else {
        imaging::warp_rgb(image, &affine, record.width, record.height, Rgb([0, 0, 0]))
    };
    Ok((out, image))
}

/// Samples specs until the landmarks stay in frame.
pub fn augment_with_redraw<R: Rng + ?Sized>(
    record: &ImageRecord,
    image: &RgbImage,
    ranges: &AugmentRanges,
    rng: &mut R,
    max_attempts: usize,
) -> Result<(ImageRecord, RgbImage, AugmentSpec), AugmentError> {
    for _ in 0..max_attempts {
        let spec = ranges.sample(rng);
        match augment(record, image, &spec) {
            Ok((r, img)) => return Ok((r, img, spec)),
            Err(AugmentError::LandmarkOutOfFrame(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(AugmentError::Exhausted(max_attempts))
}
