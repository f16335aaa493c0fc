//! Core types for POST scoring: image-frame geometry, the Gaussian heatmap
//! codec, evaluation metrics and dataset tooling.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod dataset;
pub mod geometry;
pub mod heatmap;
pub mod imaging;
pub mod metrics;
pub mod scalar;

pub use geometry::{
    build_crop_transform, post_score, post_score_with_eps, Affine2, BoundingBox, Frame, FrameTransform,
    GeometryError, Landmark, LandmarkSet, Point2, PostResult,
};
pub use heatmap::{decode, decode_with, encode, mse_loss, CodecConfig, CodecError, Decoded, HeatmapStack};
pub use scalar::Scalar;

pub type Point2F64 = Point2<f64>;
pub type Point2F32 = Point2<f32>;
pub type LandmarkSetF64 = LandmarkSet<f64>;
pub type LandmarkSetF32 = LandmarkSet<f32>;
pub type BoundingBoxF64 = BoundingBox<f64>;
pub type BoundingBoxF32 = BoundingBox<f32>;
pub type FrameTransformF64 = FrameTransform<f64>;
pub type Affine2F64 = Affine2<f64>;
pub type PostResultF64 = PostResult<f64>;
pub type HeatmapStackF32 = HeatmapStack<f32>;
