//! Detect, crop, localise, map back, score.

use std::path::Path;
use std::time::Instant;

use image::RgbImage;
use post_core::{
    build_crop_transform, decode, imaging, post_score, BoundingBox, CodecConfig, CodecError, FrameTransform, GeometryError,
    HeatmapStack, LandmarkSet, Point2, PostResult,
};
use post_models::{nms, Detector, LandmarkNet, TrainedModel};
use serde::{Deserialize, Serialize};

use crate::prep::{detector_input, DEFAULT_MARGIN};
use crate::PipelineError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InferError {
    #[error("no detection above confidence {0}")]
    NoDetection(f64),
    #[error("{0}")]
    DegenerateGeometry(String),
    #[error("{0}")]
    DecodeFailure(String),
    #[error("{0}")]
    InvalidImage(String),
    #[error(transparent)]
    Geometry(GeometryError),
}

impl InferError {
    /// Wire error code.
    pub fn code(&self) -> &'static str {
        match self {
            InferError::NoDetection(_) => "NoDetection",
            InferError::DegenerateGeometry(_) => "DegenerateGeometry",
            InferError::DecodeFailure(_) => "DecodeFailure",
            InferError::InvalidImage(_) => "InvalidImage",
            InferError::Geometry(_) => "GeometryError",
        }
    }
}

impl From<GeometryError> for InferError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::DegenerateGeometry(m) => InferError::DegenerateGeometry(m),
            GeometryError::DegenerateBox => InferError::DegenerateGeometry(e.to_string()),
            other => InferError::Geometry(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkConfidence {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "Bp")]
    pub b_prime: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "Cp")]
    pub c_prime: f64,
}

impl From<[f32; 5]> for LandmarkConfidence {
    fn from(v: [f32; 5]) -> Self {
        Self {
            a: v[0] as f64,
            b: v[1] as f64,
            b_prime: v[2] as f64,
            c: v[3] as f64,
            c_prime: v[4] as f64,
        }
    }
}

/// Every intermediate frame of one inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frames {
    /// Original → detector input letterbox.
    pub detector_input: FrameTransform<f64>,
    /// Original → landmark crop.
    pub crop: FrameTransform<f64>,
    /// Margin-expanded, clipped box the crop was cut from.
    pub crop_region: BoundingBox<f64>,
    /// Decoded landmarks in the crop frame.
    pub crop_landmarks: LandmarkSet<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHashes {
    pub detector: String,
    pub landmarks: String,
}

/// Milliseconds per stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub detect: f64,
    /// Crop, network and decode.
    pub landmarks: f64,
    pub score: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox<f64>,
    pub landmarks: LandmarkSet<f64>,
    pub confidence: LandmarkConfidence,
    pub post: PostResult<f64>,
    /// Boxes that survived NMS; only the first is used.
    pub detections: usize,
    pub frames: Frames,
    pub models: ModelHashes,
    pub timings_ms: Timings,
}

/// Landmark-network output for one box.
#[derive(Debug, Clone, PartialEq)]
pub struct Localized {
    pub crop: FrameTransform<f64>,
    pub region: BoundingBox<f64>,
    pub heatmaps: HeatmapStack<f32>,
    pub codec: CodecConfig,
    pub crop_landmarks: LandmarkSet<f64>,
    pub landmarks: LandmarkSet<f64>,
    pub confidence: [f32; 5],
}

/// Both networks, loaded once and shared read-only.
#[derive(Debug, Clone)]
pub struct Scorer {
    pub detector: Detector,
    pub net: LandmarkNet,
    pub hashes: ModelHashes,
    pub margin: f64,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

impl Scorer {
    pub fn new(detector: &TrainedModel, landmarks: &TrainedModel) -> Result<Self, PipelineError> {
        Ok(Self {
            detector: detector.detector()?,
            net: landmarks.landmark_net()?,
            hashes: ModelHashes {
                detector: detector.weights_sha256(),
                landmarks: landmarks.weights_sha256(),
            },
            margin: DEFAULT_MARGIN,
        })
    }

    pub fn load(detector: impl AsRef<Path>, landmarks: impl AsRef<Path>) -> Result<Self, PipelineError> {
        Self::new(&TrainedModel::load(detector)?, &TrainedModel::load(landmarks)?)
    }

    /// Post-NMS boxes at or above `conf_threshold` in the original frame,
    /// highest confidence first.
    pub fn detections(&self, image: &RgbImage, conf_threshold: f64) -> Result<(Vec<BoundingBox<f64>>, FrameTransform<f64>), InferError> {
        let cfg = &self.detector.config;
        let (input, t) = detector_input(image, cfg.input_size).map_err(|e| InferError::InvalidImage(e.to_string()))?;
        let raw = self.detector.forward(&[&input]).remove(0);
        let back = t.invert();
        let (w, h) = (image.width() as f64, image.height() as f64);
        let boxes = nms(&raw, cfg.nms_iou_threshold, conf_threshold)
            .into_iter()
            .map(|b| back.apply_box(&b).clip(w, h))
            .filter(|b| b.validate().is_ok())
            .collect();
        Ok((boxes, t))
    }

    /// Crops around `bbox`, runs the landmark network and maps the decoded
    /// points back. Crop-frame points are clamped to the region, so the
    /// letterbox padding never holds a landmark.
    pub fn localize(&self, image: &RgbImage, bbox: &BoundingBox<f64>) -> Result<Localized, InferError> {
        let cfg = &self.net.config;
        let size = cfg.input_size;
        let (crop, region) = build_crop_transform(bbox, self.margin, size, image.width() as f64, image.height() as f64)?;
        let mut input = vec![0.0; 3 * size * size];
        imaging::warp_to_tensor(image, &crop.to_affine(), size, size, &mut input);
        let heatmaps = self.net.forward(&[&input]).remove(0);
        let codec = cfg.codec();
        let decoded = decode(&heatmaps, &codec).map_err(|e| match e {
            CodecError::FlatHeatmap { .. } => InferError::DecodeFailure(e.to_string()),
            other => InferError::DecodeFailure(other.to_string()),
        })?;
        let lo = crop.apply(Point2::new(region.x_min, region.y_min));
        let hi = crop.apply(Point2::new(region.x_max, region.y_max));
        let crop_landmarks = decoded
            .landmarks
            .cast::<f64>()
            .map(post_core::Frame::Crop, |p| Point2::new(p.x.clamp(lo.x, hi.x), p.y.clamp(lo.y, hi.y)));
        let landmarks = crop.invert().apply_landmarks(&crop_landmarks)?;
        Ok(Localized {
            crop,
            region,
            heatmaps,
            codec,
            crop_landmarks,
            landmarks,
            confidence: decoded.confidence,
        })
    }

    /// Full pipeline on one decoded image.
    pub fn score(&self, image_id: &str, image: &RgbImage) -> Result<ScoreReport, InferError> {
        let start = Instant::now();
        let conf = self.detector.config.conf_threshold;
        let (boxes, detector_frame) = self.detections(image, conf)?;
        let detect = ms(start);
        let Some(bbox) = boxes.first().copied() else {
            return Err(InferError::NoDetection(conf));
        };
        if boxes.len() > 1 {
            log::info!("{image_id}: {} boxes survived NMS, keeping the most confident", boxes.len());
        }
        let t = Instant::now();
        let loc = self.localize(image, &bbox)?;
        let landmarks_ms = ms(t);
        let t = Instant::now();
        let post = post_score(&loc.landmarks)?;
        let score = ms(t);
        Ok(ScoreReport {
            image_id: image_id.to_string(),
            bbox,
            landmarks: loc.landmarks,
            confidence: loc.confidence.into(),
            post,
            detections: boxes.len(),
            frames: Frames {
                detector_input: detector_frame,
                crop: loc.crop,
                crop_region: loc.region,
                crop_landmarks: loc.crop_landmarks,
            },
            models: self.hashes.clone(),
            timings_ms: Timings {
                detect,
                landmarks: landmarks_ms,
                score,
                total: ms(start),
            },
        })
    }

    pub fn score_bytes(&self, image_id: &str, bytes: &[u8]) -> Result<ScoreReport, InferError> {
        let image = imaging::decode_rgb(bytes).map_err(|e| InferError::InvalidImage(e.to_string()))?;
        self.score(image_id, &image)
    }
}
