//! End-to-end orchestration: data preparation, inference, the fold
//! evaluation harness, run persistence and the scoring service.

pub mod eval;
pub mod infer;
pub mod prep;
pub mod service;
pub mod store;

use post_core::dataset::{AugmentError, FoldError, ManifestError};
use post_core::metrics::MetricsError;
use post_core::{CodecError, GeometryError};
use post_models::ModelError;

pub use eval::{evaluate, AblationRow, EvalConfig, EvalOutput, FoldModels, FoldTrainer, ModelTrainer, Predictor};
pub use infer::{InferError, Localized, ScoreReport, Scorer};
pub use prep::Dataset;
pub use store::{RunKind, RunStore};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Fold(#[from] FoldError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error("image {id}: {message}")]
    Image { id: String, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}
