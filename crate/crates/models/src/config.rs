use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::ModelError;

fn unit_open(name: &str, v: f64) -> Result<(), ModelError> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidConfig(format!("{name} = {v} must lie in (0, 1)")))
    }
}

fn positive(name: &str, v: f64) -> Result<(), ModelError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ModelError::InvalidConfig(format!("{name} = {v} must be positive")))
    }
}

/// Grid-head single-class detector and its SGD schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub grid_size: usize,
    pub input_size: usize,
    pub conf_threshold: f64,
    pub nms_iou_threshold: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Backbone stage widths; each stage halves the resolution.
    pub channels: Vec<usize>,
    pub early_stop_patience: Option<usize>,
    pub pretrained_init: Option<PathBuf>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            grid_size: 8,
            input_size: 128,
            conf_threshold: 0.25,
            nms_iou_threshold: 0.45,
            epochs: 250,
            learning_rate: 1e-2,
            momentum: 0.937,
            weight_decay: 5e-4,
            batch_size: 16,
            channels: vec![16, 32, 64, 96],
            early_stop_patience: None,
            pretrained_init: None,
        }
    }
}

impl DetectorConfig {
    pub fn stride(&self) -> usize {
        self.input_size / self.grid_size
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        unit_open("conf_threshold", self.conf_threshold)?;
        unit_open("nms_iou_threshold", self.nms_iou_threshold)?;
        positive("learning_rate", self.learning_rate)?;
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(ModelError::InvalidConfig("momentum in [0, 1), weight_decay >= 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.grid_size == 0 {
            return Err(ModelError::InvalidConfig("epochs, batch_size and grid_size must be positive".into()));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(ModelError::InvalidConfig("channels must be non-empty and positive".into()));
        }
        let stride = 1usize << self.channels.len();
        if self.input_size != self.grid_size * stride {
            return Err(ModelError::ConfigMismatch(format!(
                "input {} must equal grid {} x stride {stride} ({} stages)",
                self.input_size,
                self.grid_size,
                self.channels.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    UpsampleConcat1x1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrDrop {
    pub epoch: usize,
    pub lr: f64,
}

/// Multi-resolution landmark network and its Adam schedule. Epochs are
/// numbered from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LandmarkNetConfig {
    pub stages: usize,
    pub stream_widths: Vec<usize>,
    pub fusion: Fusion,
    pub head: HeadKind,
    pub heatmap_size: usize,
    pub input_size: usize,
    pub sigma: f64,
    pub stem_width: usize,
    pub blocks_per_stage: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub lr_drops: Vec<LrDrop>,
}

impl Default for LandmarkNetConfig {
    fn default() -> Self {
        Self {
            stages: 4,
            stream_widths: vec![18, 36, 72, 144],
            fusion: Fusion::Sum,
            head: HeadKind::UpsampleConcat1x1,
            heatmap_size: 64,
            input_size: 256,
            sigma: 1.5,
            stem_width: 16,
            blocks_per_stage: 1,
            epochs: 100,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            batch_size: 16,
            early_stop_patience: 15,
            lr_drops: vec![LrDrop { epoch: 50, lr: 1e-5 }, LrDrop { epoch: 70, lr: 1e-6 }],
        }
    }
}

impl LandmarkNetConfig {
    /// The three width variants compared in the ablation.
    pub const WIDTH_VARIANTS: [[usize; 4]; 3] = [[18, 36, 72, 144], [36, 72, 144, 288], [48, 96, 192, 384]];

    pub fn with_widths(widths: &[usize]) -> Self {
        Self {
            stream_widths: widths.to_vec(),
            stages: widths.len(),
            ..Self::default()
        }
    }

    pub fn codec(&self) -> post_core::CodecConfig {
        post_core::CodecConfig {
            sigma_x: self.sigma,
            sigma_y: self.sigma,
            heatmap_size: self.heatmap_size,
            input_size: self.input_size,
        }
    }

    /// Learning rate in effect during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr_drops
            .iter()
            .filter(|d| epoch >= d.epoch)
            .max_by_key(|d| d.epoch)
            .map_or(self.learning_rate, |d| d.lr)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.stages == 0 || self.stages != self.stream_widths.len() {
            return Err(ModelError::InvalidConfig(format!(
                "stages {} must equal the number of stream widths {}",
                self.stages,
                self.stream_widths.len()
            )));
        }
        if self.stream_widths[0] == 0 || self.stream_widths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ModelError::InvalidConfig("stream widths must be positive and strictly increasing".into()));
        }
        if self.stem_width == 0 || self.blocks_per_stage == 0 {
            return Err(ModelError::InvalidConfig("stem width and blocks must be positive".into()));
        }
        positive("sigma", self.sigma)?;
        positive("learning_rate", self.learning_rate)?;
        unit_open("beta1", self.beta1)?;
        unit_open("beta2", self.beta2)?;
        if self.epochs == 0 || self.batch_size == 0 || self.early_stop_patience == 0 {
            return Err(ModelError::InvalidConfig("epochs, batch_size and patience must be positive".into()));
        }
        let deepest = 4usize << (self.stages - 1);
        if self.input_size != 4 * self.heatmap_size || self.input_size % deepest != 0 {
            return Err(ModelError::ConfigMismatch(format!(
                "input {} must be 4 x heatmap {} and divisible by {deepest}",
                self.input_size, self.heatmap_size
            )));
        }
        Ok(())
    }
}
