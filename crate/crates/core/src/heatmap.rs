//! Gaussian heatmap targets for the five landmarks, sub-cell decoding of
//! predicted heatmaps, and the regression loss.
//!
//! Heatmap coordinates are crop pixels divided by the stride: a landmark at
//! crop pixel `(4·i, 4·j)` (stride 4) sits exactly on cell `(i, j)`.

use serde::{Deserialize, Serialize};

use crate::geometry::{Frame, Landmark, LandmarkSet, Point2};
use crate::scalar::Scalar;

pub const NUM_LANDMARKS: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodecError {
    #[error("landmark {landmark} at ({x}, {y}) maps outside the {size}x{size} heatmap")]
    OutOfFrame {
        landmark: &'static str,
        x: f64,
        y: f64,
        size: usize,
    },
    #[error("heatmap channel {channel} is flat")]
    FlatHeatmap { channel: usize },
    #[error("heatmap shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("landmarks must be in the crop frame, found {0}")]
    WrongFrame(Frame),
    #[error("invalid codec configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    /// Gaussian standard deviation along x, in cells.
    pub sigma_x: f64,
    /// Gaussian standard deviation along y, in cells.
    pub sigma_y: f64,
    /// Heatmap side in cells.
    pub heatmap_size: usize,
    /// Crop side in pixels.
    pub input_size: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            sigma_x: 1.5,
            sigma_y: 1.5,
            heatmap_size: 64,
            input_size: 256,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<(), CodecError> {
        if !(self.sigma_x > 0.0 && self.sigma_y > 0.0) {
            return Err(CodecError::InvalidConfig("sigma must be positive".into()));
        }
        if self.heatmap_size == 0 || self.input_size == 0 || self.input_size % self.heatmap_size != 0 {
            return Err(CodecError::InvalidConfig(format!(
                "input size {} must be a positive multiple of heatmap size {}",
                self.input_size, self.heatmap_size
            )));
        }
        Ok(())
    }

    /// Crop pixels per heatmap cell.
    pub fn stride(&self) -> f64 {
        (self.input_size / self.heatmap_size) as f64
    }
}

/// Five-channel heatmap in channel order A, B, B', C, C', row-major cells.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Scalar> HeatmapStack<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![T::zero(); NUM_LANDMARKS * height * width],
        }
    }

    /// `values` holds `5 · height · width` entries, channel-major.
    pub fn from_vec(height: usize, width: usize, values: Vec<T>) -> Result<Self, CodecError> {
        if values.len() != NUM_LANDMARKS * height * width {
            return Err(CodecError::InvalidConfig(format!(
                "expected {} values for a 5x{height}x{width} stack, got {}",
                NUM_LANDMARKS * height * width,
                values.len()
            )));
        }
        Ok(Self { height, width, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn channel(&self, k: usize) -> &[T] {
        let n = self.height * self.width;
        &self.values[k * n..(k + 1) * n]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut [T] {
        let n = self.height * self.width;
        &mut self.values[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn get(&self, k: usize, row: usize, col: usize) -> T {
        self.values[(k * self.height + row) * self.width + col]
    }

    /// Row-major index of the channel maximum; ties go to the lowest index.
    pub fn argmax(&self, k: usize) -> (usize, usize) {
        let ch = self.channel(k);
        let mut best = 0;
        for (i, v) in ch.iter().enumerate().skip(1) {
            if *v > ch[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }
}

/// Unnormalised (peak 1) Gaussian per landmark, evaluated at cell centres.
pub fn encode<T: Scalar>(lm: &LandmarkSet<T>, cfg: &CodecConfig) -> Result<HeatmapStack<T>, CodecError> {
    cfg.validate()?;
    if lm.frame != Frame::Crop {
        return Err(CodecError::WrongFrame(lm.frame));
    }
    let size = cfg.heatmap_size;
    let stride = T::of(cfg.stride());
    let limit = T::of(size as f64);
    let mut hm = HeatmapStack::zeros(size, size);
    let two = T::two();
    let inv_x = T::one() / (two * T::of(cfg.sigma_x * cfg.sigma_x));
    let inv_y = T::one() / (two * T::of(cfg.sigma_y * cfg.sigma_y));
    for (k, l) in Landmark::ALL.iter().enumerate() {
        let p = lm.get(*l);
        let (cx, cy) = (p.x / stride, p.y / stride);
        if !(cx >= T::zero() && cx < limit && cy >= T::zero() && cy < limit) {
            return Err(CodecError::OutOfFrame {
                landmark: l.key(),
                x: p.x.to_f64_lossy(),
                y: p.y.to_f64_lossy(),
                size,
            });
        }
        let gx: Vec<T> = (0..size)
            .map(|i| {
                let d = T::of(i as f64) - cx;
                d * d * inv_x
            })
            .collect();
        let ch = hm.channel_mut(k);
        for row in 0..size {
            let dy = T::of(row as f64) - cy;
            let ey = dy * dy * inv_y;
            for (col, ex) in gx.iter().enumerate() {
                ch[row * size + col] = (-(*ex + ey)).exp();
            }
        }
    }
    Ok(hm)
}

/// Decoded landmarks (crop frame) and per-landmark peak activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded<T> {
    pub landmarks: LandmarkSet<T>,
    pub confidence: [T; NUM_LANDMARKS],
}

/// Argmax per channel, nudged a quarter cell toward the larger axial
/// neighbour (a missing neighbour at the border counts as smaller), then
/// scaled back to crop pixels.
pub fn decode<T: Scalar>(hm: &HeatmapStack<T>, cfg: &CodecConfig) -> Result<Decoded<T>, CodecError> {
    decode_with(hm, cfg, true)
}

/// [`decode`] with the quarter-cell refinement optionally disabled.
pub fn decode_with<T: Scalar>(hm: &HeatmapStack<T>, cfg: &CodecConfig, refine: bool) -> Result<Decoded<T>, CodecError> {
    cfg.validate()?;
    if hm.shape() != (cfg.heatmap_size, cfg.heatmap_size) {
        return Err(CodecError::ShapeMismatch(hm.shape(), (cfg.heatmap_size, cfg.heatmap_size)));
    }
    let stride = T::of(cfg.stride());
    let quarter = T::of(0.25);
    let mut points = [Point2::new(T::zero(), T::zero()); NUM_LANDMARKS];
    let mut confidence = [T::zero(); NUM_LANDMARKS];
    for k in 0..NUM_LANDMARKS {
        let ch = hm.channel(k);
        let (lo, hi) = ch
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if !(hi > lo) {
            return Err(CodecError::FlatHeatmap { channel: k });
        }
        let (row, col) = hm.argmax(k);
        let mut x = T::of(col as f64);
        let mut y = T::of(row as f64);
        if refine {
            let at = |r: isize, c: isize| -> T {
                if r < 0 || c < 0 || r >= hm.height as isize || c >= hm.width as isize {
                    T::neg_infinity()
                } else {
                    hm.get(k, r as usize, c as usize)
                }
            };
            let (r, c) = (row as isize, col as isize);
            x = x + quarter * step(at(r, c + 1), at(r, c - 1));
            y = y + quarter * step(at(r + 1, c), at(r - 1, c));
        }
        points[k] = Point2::new(x * stride, y * stride);
        confidence[k] = ch[row * hm.width + col];
    }
    Ok(Decoded {
        landmarks: LandmarkSet::from_points(points, Frame::Crop),
        confidence,
    })
}

fn step<T: Scalar>(forward: T, backward: T) -> T {
    if forward > backward {
        T::one()
    } else if backward > forward {
        -T::one()
    } else {
        T::zero()
    }
}

/// Mean of squared differences over every channel and cell.
pub fn mse_loss<T: Scalar>(pred: &HeatmapStack<T>, target: &HeatmapStack<T>) -> Result<T, CodecError> {
    if pred.shape() != target.shape() {
        return Err(CodecError::ShapeMismatch(pred.shape(), target.shape()));
    }
    let sum = pred
        .values
        .iter()
        .zip(&target.values)
        .fold(T::zero(), |acc, (p, t)| acc + (*p - *t) * (*p - *t));
    Ok(sum / T::of(pred.values.len() as f64))
}
