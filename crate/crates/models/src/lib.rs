//! The two trainable networks: a grid-head glans detector with non-maximum
//! suppression, and a multi-resolution heatmap landmark regressor, plus
//! their training loops and on-disk artifacts.

pub mod artifact;
pub mod config;
pub mod detector;
pub mod hrnet;
mod nms;
pub mod train;

pub use artifact::{ModelKind, Provenance, TrainedModel};
pub use config::{DetectorConfig, Fusion, HeadKind, LandmarkNetConfig, LrDrop};
pub use detector::{DetectionSample, Detector};
pub use hrnet::{LandmarkNet, LandmarkSample};
pub use nms::nms;
pub use train::{fit, train_detector, train_landmarks, EpochRecord, Fit, FitOutcome, TrainRequest};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("no data: {0}")]
    DataEmpty(String),
    #[error("non-finite loss at epoch {epoch} (train {train_loss}, val {val_loss})")]
    NonFiniteLoss { epoch: usize, train_loss: f64, val_loss: f64 },
    #[error("expected a {expected:?} model, found {found:?}")]
    WrongKind { expected: ModelKind, found: ModelKind },
    #[error("corrupt model: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Weights(#[from] post_nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
