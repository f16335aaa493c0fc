//! Image-plane geometry: points, the five POST landmarks, boxes, the
//! isotropic frame transforms used for cropping, and the POST score itself.
//!
//! Coordinates are pixels with the origin at the top-left corner, `x`
//! pointing right and `y` pointing down.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("bounding box has zero area after margin expansion and clipping")]
    DegenerateBox,
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("landmarks are in the {found} frame, expected {expected}")]
    WrongFrame { expected: Frame, found: Frame },
    #[error("crop size must be positive")]
    InvalidCropSize,
    #[error("non-finite coordinate")]
    NonFinite,
}

/// Coordinate frame a set of landmarks is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Pixels of the full input image.
    #[default]
    Original,
    /// Pixels of the letterboxed landmark-network crop.
    Crop,
    /// Heatmap cells.
    Heatmap,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Frame::Original => "original",
            Frame::Crop => "crop",
            Frame::Heatmap => "heatmap",
        })
    }
}

/// Serialised as a two-element array `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[T; 2]", into = "[T; 2]")]
#[serde(bound = "T: Scalar")]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> From<[T; 2]> for Point2<T> {
    fn from([x, y]: [T; 2]) -> Self {
        Self { x, y }
    }
}

impl<T: Scalar> From<Point2<T>> for [T; 2] {
    fn from(p: Point2<T>) -> Self {
        [p.x, p.y]
    }
}

impl<T: Scalar> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Self) -> T {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn cast<U: Scalar>(self) -> Point2<U> {
        Point2::new(U::of(self.x.to_f64_lossy()), U::of(self.y.to_f64_lossy()))
    }
}

impl<T: Scalar> Add for Point2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Scalar> Sub for Point2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Scalar> Mul<T> for Point2<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

/// Landmark identity; the discriminant is the channel index in heatmaps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Landmark {
    /// Distal midline mucocutaneous junction.
    A,
    /// Glanular knob on the left plate edge.
    B,
    /// Glanular knob on the right plate edge.
    BPrime,
    /// Left glanular/coronal junction.
    C,
    /// Right glanular/coronal junction.
    CPrime,
}

impl Landmark {
    pub const ALL: [Landmark; 5] = [Landmark::A, Landmark::B, Landmark::BPrime, Landmark::C, Landmark::CPrime];

    /// Key used in manifests and over the wire.
    pub fn key(self) -> &'static str {
        match self {
            Landmark::A => "A",
            Landmark::B => "B",
            Landmark::BPrime => "Bp",
            Landmark::C => "C",
            Landmark::CPrime => "Cp",
        }
    }

    /// The label on the other side of the midline after a horizontal flip.
    pub fn mirrored(self) -> Self {
        match self {
            Landmark::A => Landmark::A,
            Landmark::B => Landmark::BPrime,
            Landmark::BPrime => Landmark::B,
            Landmark::C => Landmark::CPrime,
            Landmark::CPrime => Landmark::C,
        }
    }
}

/// The five POST landmarks in a stated frame. `B` pairs with `C` and `B'`
/// with `C'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LandmarkSet<T> {
    #[serde(rename = "A")]
    pub a: Point2<T>,
    #[serde(rename = "B")]
    pub b: Point2<T>,
    #[serde(rename = "Bp")]
    pub b_prime: Point2<T>,
    #[serde(rename = "C")]
    pub c: Point2<T>,
    #[serde(rename = "Cp")]
    pub c_prime: Point2<T>,
    #[serde(default)]
    pub frame: Frame,
}

impl<T: Scalar> LandmarkSet<T> {
    /// Points in channel order A, B, B', C, C'.
    pub fn from_points(points: [Point2<T>; 5], frame: Frame) -> Self {
        let [a, b, b_prime, c, c_prime] = points;
        Self {
            a,
            b,
            b_prime,
            c,
            c_prime,
            frame,
        }
    }

    pub fn points(&self) -> [Point2<T>; 5] {
        [self.a, self.b, self.b_prime, self.c, self.c_prime]
    }

    pub fn get(&self, l: Landmark) -> Point2<T> {
        self.points()[l as usize]
    }

    pub fn map(&self, frame: Frame, f: impl Fn(Point2<T>) -> Point2<T>) -> Self {
        Self::from_points(self.points().map(f), frame)
    }

    /// Exchanges B↔B' and C↔C'; A stays on the midline.
    pub fn swap_sides(&self) -> Self {
        Self {
            b: self.b_prime,
            b_prime: self.b,
            c: self.c_prime,
            c_prime: self.c,
            ..*self
        }
    }

    /// |CC'|, the normaliser for landmark error.
    pub fn glanular_diameter(&self) -> T {
        self.c.distance(self.c_prime)
    }

    pub fn is_finite(&self) -> bool {
        self.points().iter().all(|p| p.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> LandmarkSet<U> {
        LandmarkSet::from_points(self.points().map(Point2::cast), self.frame)
    }
}

/// Axis-aligned box with a detection confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BoundingBox<T> {
    pub x_min: T,
    pub y_min: T,
    pub x_max: T,
    pub y_max: T,
    #[serde(default = "one")]
    pub confidence: T,
}

fn one<T: Scalar>() -> T {
    T::one()
}

impl<T: Scalar> BoundingBox<T> {
    pub fn new(x_min: T, y_min: T, x_max: T, y_max: T, confidence: T) -> Result<Self, GeometryError> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
            confidence,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let vals = [self.x_min, self.y_min, self.x_max, self.y_max, self.confidence];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(GeometryError::InvalidBox(format!(
                "({}, {}, {}, {}) is empty or inverted",
                self.x_min, self.y_min, self.x_max, self.y_max
            )));
        }
        if self.confidence < T::zero() || self.confidence > T::one() {
            return Err(GeometryError::InvalidBox(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }

    /// Box from a centre and a size.
    pub fn from_center(cx: T, cy: T, w: T, h: T, confidence: T) -> Self {
        let hw = w * T::half();
        let hh = h * T::half();
        Self {
            x_min: cx - hw,
            y_min: cy - hh,
            x_max: cx + hw,
            y_max: cy + hh,
            confidence,
        }
    }

    pub fn width(&self) -> T {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> T {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> T {
        self.width().max(T::zero()) * self.height().max(T::zero())
    }

    pub fn center(&self) -> Point2<T> {
        Point2::new(
            (self.x_min + self.x_max) * T::half(),
            (self.y_min + self.y_max) * T::half(),
        )
    }

    pub fn contains(&self, p: Point2<T>) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    /// Grows every side by `margin_frac` of the longer side.
    pub fn expand(&self, margin_frac: T) -> Self {
        let m = margin_frac * self.width().max(self.height());
        Self {
            x_min: self.x_min - m,
            y_min: self.y_min - m,
            x_max: self.x_max + m,
            y_max: self.y_max + m,
            confidence: self.confidence,
        }
    }

    /// Intersection with `[0, width] × [0, height]`.
    pub fn clip(&self, width: T, height: T) -> Self {
        Self {
            x_min: self.x_min.max(T::zero()).min(width),
            y_min: self.y_min.max(T::zero()).min(height),
            x_max: self.x_max.max(T::zero()).min(width),
            y_max: self.y_max.max(T::zero()).min(height),
            confidence: self.confidence,
        }
    }

    /// Tightest box around a set of points.
    pub fn enclosing(points: &[Point2<T>], confidence: T) -> Self {
        let mut b = Self {
            x_min: T::infinity(),
            y_min: T::infinity(),
            x_max: T::neg_infinity(),
            y_max: T::neg_infinity(),
            confidence,
        };
        for p in points {
            b.x_min = b.x_min.min(p.x);
            b.y_min = b.y_min.min(p.y);
            b.x_max = b.x_max.max(p.x);
            b.y_max = b.y_max.max(p.y);
        }
        b
    }

    pub fn corners(&self) -> [Point2<T>; 4] {
        [
            Point2::new(self.x_min, self.y_min),
            Point2::new(self.x_max, self.y_min),
            Point2::new(self.x_max, self.y_max),
            Point2::new(self.x_min, self.y_max),
        ]
    }

    pub fn cast<U: Scalar>(&self) -> BoundingBox<U> {
        BoundingBox {
            x_min: U::of(self.x_min.to_f64_lossy()),
            y_min: U::of(self.y_min.to_f64_lossy()),
            x_max: U::of(self.x_max.to_f64_lossy()),
            y_max: U::of(self.y_max.to_f64_lossy()),
            confidence: U::of(self.confidence.to_f64_lossy()),
        }
    }
}

/// `p' = scale · p + offset`: a single isotropic scale plus translation
/// between two frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FrameTransform<T> {
    pub scale: T,
    pub offset_x: T,
    pub offset_y: T,
    pub source: Frame,
    pub target: Frame,
}

impl<T: Scalar> FrameTransform<T> {
    pub fn new(scale: T, offset_x: T, offset_y: T, source: Frame, target: Frame) -> Self {
        debug_assert!(scale > T::zero(), "frame transform scale must be positive");
        Self {
            scale,
            offset_x,
            offset_y,
            source,
            target,
        }
    }

    pub fn identity(frame: Frame) -> Self {
        Self::new(T::one(), T::zero(), T::zero(), frame, frame)
    }

    pub fn apply(&self, p: Point2<T>) -> Point2<T> {
        Point2::new(self.scale * p.x + self.offset_x, self.scale * p.y + self.offset_y)
    }

    pub fn invert(&self) -> Self {
        let inv = T::one() / self.scale;
        Self {
            scale: inv,
            offset_x: -self.offset_x * inv,
            offset_y: -self.offset_y * inv,
            source: self.target,
            target: self.source,
        }
    }

    /// `other ∘ self`: first `self`, then `other`.
    pub fn then(&self, other: &Self) -> Self {
        Self {
            scale: self.scale * other.scale,
            offset_x: other.scale * self.offset_x + other.offset_x,
            offset_y: other.scale * self.offset_y + other.offset_y,
            source: self.source,
            target: other.target,
        }
    }

    /// Maps every landmark and relabels the frame. The set must be in the
    /// transform's source frame.
    pub fn apply_landmarks(&self, lm: &LandmarkSet<T>) -> Result<LandmarkSet<T>, GeometryError> {
        if lm.frame != self.source {
            return Err(GeometryError::WrongFrame {
                expected: self.source,
                found: lm.frame,
            });
        }
        Ok(lm.map(self.target, |p| self.apply(p)))
    }

    pub fn apply_box(&self, b: &BoundingBox<T>) -> BoundingBox<T> {
        let lo = self.apply(Point2::new(b.x_min, b.y_min));
        let hi = self.apply(Point2::new(b.x_max, b.y_max));
        BoundingBox {
            x_min: lo.x,
            y_min: lo.y,
            x_max: hi.x,
            y_max: hi.y,
            confidence: b.confidence,
        }
    }

    pub fn to_affine(&self) -> Affine2<T> {
        Affine2 {
            m: [
                [self.scale, T::zero(), self.offset_x],
                [T::zero(), self.scale, self.offset_y],
            ],
        }
    }
}

/// General 2D affine map `p' = M·[x, y, 1]ᵀ`, used for augmentation warps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2<T> {
    pub m: [[T; 3]; 2],
}

impl<T: Scalar> Affine2<T> {
    pub fn identity() -> Self {
        Self {
            m: [[T::one(), T::zero(), T::zero()], [T::zero(), T::one(), T::zero()]],
        }
    }

    pub fn translation(tx: T, ty: T) -> Self {
        Self {
            m: [[T::one(), T::zero(), tx], [T::zero(), T::one(), ty]],
        }
    }

    /// The standard rotation matrix applied to pixel coordinates; with `y`
    /// pointing down a positive angle turns clockwise on screen.
    pub fn rotation(radians: T) -> Self {
        let (s, c) = radians.sin_cos();
        Self {
            m: [[c, -s, T::zero()], [s, c, T::zero()]],
        }
    }

    pub fn scaling(s: T) -> Self {
        Self {
            m: [[s, T::zero(), T::zero()], [T::zero(), s, T::zero()]],
        }
    }

    /// `x ↦ -x`.
    pub fn mirror_x() -> Self {
        Self {
            m: [[-T::one(), T::zero(), T::zero()], [T::zero(), T::one(), T::zero()]],
        }
    }

    pub fn apply(&self, p: Point2<T>) -> Point2<T> {
        let m = &self.m;
        Point2::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2],
            m[1][0] * p.x + m[1][1] * p.y + m[1][2],
        )
    }

    /// `other ∘ self`.
    pub fn then(&self, other: &Self) -> Self {
        let a = &other.m;
        let b = &self.m;
        let mut m = [[T::zero(); 3]; 2];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
            row[2] = row[2] + a[r][2];
        }
        Self { m }
    }

    pub fn determinant(&self) -> T {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    /// `None` for singular maps.
    pub fn invert(&self) -> Option<Self> {
        let det = self.determinant();
        if det == T::zero() || !det.is_finite() {
            return None;
        }
        let [[a, b, tx], [c, d, ty]] = self.m;
        let ia = d / det;
        let ib = -b / det;
        let ic = -c / det;
        let id = a / det;
        Some(Self {
            m: [[ia, ib, -(ia * tx + ib * ty)], [ic, id, -(ic * tx + id * ty)]],
        })
    }

    /// Length scale of a similarity map (sqrt of |det|).
    pub fn linear_scale(&self) -> T {
        self.determinant().abs().sqrt()
    }
}

/// Maps the margin-expanded, image-clipped `bbox` into a `crop_size` square
/// with one isotropic scale: the longer side fills the crop exactly and the
/// shorter side is centred with symmetric padding.
///
/// Returns the transform (original → crop) and the clipped source region.
pub fn build_crop_transform<T: Scalar>(
    bbox: &BoundingBox<T>,
    margin_frac: T,
    crop_size: usize,
    image_width: T,
    image_height: T,
) -> Result<(FrameTransform<T>, BoundingBox<T>), GeometryError> {
    if crop_size == 0 {
        return Err(GeometryError::InvalidCropSize);
    }
    bbox.validate()?;
    if margin_frac < T::zero() || !margin_frac.is_finite() {
        return Err(GeometryError::InvalidBox(format!("margin fraction {margin_frac} must be >= 0")));
    }
    let region = bbox.expand(margin_frac).clip(image_width, image_height);
    if region.width() <= T::zero() || region.height() <= T::zero() {
        return Err(GeometryError::DegenerateBox);
    }
    let side = T::of(crop_size as f64);
    let scale = side / region.width().max(region.height());
    let pad_x = (side - region.width() * scale) * T::half();
    let pad_y = (side - region.height() * scale) * T::half();
    let t = FrameTransform::new(
        scale,
        pad_x - scale * region.x_min,
        pad_y - scale * region.y_min,
        Frame::Original,
        Frame::Crop,
    );
    Ok((t, region))
}

/// Side ratios and their mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PostResult<T> {
    /// |AB| / |BC|
    pub ratio_left: T,
    /// |AB'| / |B'C'|
    pub ratio_right: T,
    pub score: T,
    /// |CC'| in pixels.
    pub glanular_diameter: T,
}

/// Degeneracy threshold for |BC| and |B'C'|, in pixels.
pub const DEFAULT_DEGENERACY_EPS: f64 = 1e-6;

/// POST score of landmarks in the original image frame, rejecting edges
/// shorter than [`DEFAULT_DEGENERACY_EPS`].
pub fn post_score<T: Scalar>(lm: &LandmarkSet<T>) -> Result<PostResult<T>, GeometryError> {
    post_score_with_eps(lm, T::of(DEFAULT_DEGENERACY_EPS))
}

pub fn post_score_with_eps<T: Scalar>(lm: &LandmarkSet<T>, eps: T) -> Result<PostResult<T>, GeometryError> {
    if lm.frame != Frame::Original {
        return Err(GeometryError::WrongFrame {
            expected: Frame::Original,
            found: lm.frame,
        });
    }
    if !lm.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    let bc = lm.b.distance(lm.c);
    let bc_prime = lm.b_prime.distance(lm.c_prime);
    if bc < eps {
        return Err(GeometryError::DegenerateGeometry(format!("|BC| = {bc} below {eps}")));
    }
    if bc_prime < eps {
        return Err(GeometryError::DegenerateGeometry(format!("|B'C'| = {bc_prime} below {eps}")));
    }
    let ratio_left = lm.a.distance(lm.b) / bc;
    let ratio_right = lm.a.distance(lm.b_prime) / bc_prime;
    Ok(PostResult {
        ratio_left,
        ratio_right,
        score: (ratio_left + ratio_right) / T::two(),
        glanular_diameter: lm.glanular_diameter(),
    })
}
