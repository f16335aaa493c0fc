//! Fold-wise training and evaluation.

use std::collections::{BTreeMap, HashSet};

use image::RgbImage;
use post_core::dataset::{AugmentRanges, FoldPlan, FoldSplit};
use post_core::metrics::{
    aggregate_folds, average_precision, mean_average_precision, nme, sensitivity, DetectionRecord, EvalReport, FoldFailure,
    FoldMetrics, NmeResult, DEFAULT_CONFIDENCE_THRESHOLD, DEFAULT_FAILURE_THRESHOLD, DEFAULT_IOU_THRESHOLD,
};
use post_core::{encode, mse_loss, BoundingBox};
use post_models::{train_detector, train_landmarks, DetectorConfig, LandmarkNetConfig, TrainRequest, TrainedModel};
use serde::{Deserialize, Serialize};

use crate::infer::{InferError, Localized, Scorer};
use crate::prep::{detection_sample, landmark_sample, sample_seed, with_redraw, Dataset, DEFAULT_MARGIN};
use crate::PipelineError;

/// Lowest confidence kept when ranking detections for AP.
pub const EVAL_CONF_FLOOR: f64 = 1e-3;

/// What evaluation needs from a trained fold.
pub trait Predictor {
    /// Post-NMS boxes in the original frame, most confident first.
    fn detect(&self, image_id: &str, image: &RgbImage) -> Result<Vec<BoundingBox<f64>>, InferError>;
    fn localize(&self, image_id: &str, image: &RgbImage, bbox: &BoundingBox<f64>) -> Result<Localized, InferError>;
}

impl Predictor for Scorer {
    fn detect(&self, _: &str, image: &RgbImage) -> Result<Vec<BoundingBox<f64>>, InferError> {
        Ok(self.detections(image, EVAL_CONF_FLOOR)?.0)
    }

    fn localize(&self, _: &str, image: &RgbImage, bbox: &BoundingBox<f64>) -> Result<Localized, InferError> {
        Scorer::localize(self, image, bbox)
    }
}

/// Produces a predictor for one fold and landmark-config variant. Must only
/// read the split's train and val records.
pub trait FoldTrainer {
    fn train(&mut self, split: &FoldSplit, data: &Dataset, variant: usize) -> Result<Box<dyn Predictor>, PipelineError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub detector: DetectorConfig,
    /// One entry per ablation row; the first is the headline configuration.
    pub landmarks: Vec<LandmarkNetConfig>,
    pub margin: f64,
    pub iou_threshold: f64,
    pub confidence_threshold: f64,
    pub failure_threshold: f64,
    /// `None` disables training-time augmentation.
    pub augmentation: Option<AugmentRanges>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            landmarks: vec![LandmarkNetConfig::default()],
            margin: DEFAULT_MARGIN,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            failure_threshold: DEFAULT_FAILURE_THRESHOLD,
            augmentation: Some(AugmentRanges::default()),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub stream_widths: Vec<usize>,
    pub nme_mean: f64,
    pub nme_std: f64,
    pub fr_at_0p1: f64,
    pub mse_mean: f64,
    pub failed_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    /// Headline report (first landmark config).
    pub report: EvalReport,
    pub variants: Vec<EvalReport>,
    pub ablation: Vec<AblationRow>,
}

fn check_plan(data: &Dataset, plan: &FoldPlan) -> Result<(), PipelineError> {
    for r in &data.records {
        if r.is_accepted() && !plan.assignments.contains_key(&r.image_id) {
            return Err(PipelineError::Invalid(format!("fold plan does not cover {}", r.image_id)));
        }
    }
    for id in plan.assignments.keys() {
        if data.record(id).is_none() {
            return Err(PipelineError::Invalid(format!("fold plan names unknown image {id}")));
        }
    }
    Ok(())
}

fn check_disjoint(split: &FoldSplit) -> Result<(), PipelineError> {
    let test: HashSet<&String> = split.test.iter().collect();
    let val: HashSet<&String> = split.val.iter().collect();
    let mut seen = HashSet::new();
    for id in split.train.iter().chain(&split.val) {
        if test.contains(id) || !seen.insert(id) {
            return Err(PipelineError::Invalid(format!("fold {} mixes record {id}", split.fold)));
        }
    }
    if split.train.iter().any(|id| val.contains(id)) {
        return Err(PipelineError::Invalid(format!("fold {} train and val overlap", split.fold)));
    }
    Ok(())
}

/// Metrics of one trained fold on its test records. Landmarks are scored
/// on crops around the top predicted box; an image without any box falls
/// back to the whole frame.
pub fn fold_metrics(
    fold: usize,
    predictor: &dyn Predictor,
    data: &Dataset,
    test: &[String],
    cfg: &EvalConfig,
) -> Result<FoldMetrics, PipelineError> {
    let mut records = Vec::with_capacity(test.len());
    let mut nmes = Vec::with_capacity(test.len());
    let mut mses = Vec::with_capacity(test.len());
    for id in test {
        let (rec, img) = data.get(id)?;
        let boxes = predictor.detect(id, img)?;
        let crop_box = match boxes.first() {
            Some(b) => *b,
            None => {
                log::warn!("fold {fold}: no box for {id}, cropping the whole frame");
                BoundingBox::new(0.0, 0.0, rec.width as f64, rec.height as f64, 0.0)?
            }
        };
        records.push(DetectionRecord {
            image_id: id.clone(),
            predictions: boxes,
            ground_truth: vec![rec.gt_box],
        });
        let loc = predictor.localize(id, img, &crop_box)?;
        nmes.push(nme(&loc.landmarks, &rec.landmarks)?);
        let target = loc
            .crop
            .apply_landmarks(&rec.landmarks)
            .ok()
            .and_then(|gt| encode(&gt.cast::<f32>(), &loc.codec).ok());
        match target {
            Some(t) => mses.push(f64::from(mse_loss(&loc.heatmaps, &t)?)),
            None => log::debug!("fold {fold}: ground truth of {id} leaves the predicted crop, no heatmap MSE"),
        }
    }
    let ap = average_precision(&records, cfg.iou_threshold)?;
    let map = mean_average_precision(&[ap])?;
    let sens = sensitivity(&records, cfg.iou_threshold, cfg.confidence_threshold)?;
    let mse = if mses.is_empty() {
        0.0
    } else {
        mses.iter().sum::<f64>() / mses.len() as f64
    };
    Ok(FoldMetrics {
        fold,
        landmarks: NmeResult::from_per_image(nmes, mse, cfg.failure_threshold)?,
        map: Some(map),
        sensitivity: Some(sens),
    })
}

/// Trains and scores every fold for every landmark config. A failing fold
/// is recorded and the others continue.
pub fn evaluate(
    data: &Dataset,
    plan: &FoldPlan,
    cfg: &EvalConfig,
    trainer: &mut dyn FoldTrainer,
) -> Result<EvalOutput, PipelineError> {
    if cfg.landmarks.is_empty() {
        return Err(PipelineError::Invalid("no landmark configuration".into()));
    }
    check_plan(data, plan)?;
    let mut variants = Vec::with_capacity(cfg.landmarks.len());
    for (v, lm_cfg) in cfg.landmarks.iter().enumerate() {
        let mut done = Vec::new();
        let mut failed = Vec::new();
        for fold in 0..plan.k {
            let split = plan.split(fold);
            check_disjoint(&split)?;
            let result = trainer
                .train(&split, data, v)
                .and_then(|p| fold_metrics(fold, p.as_ref(), data, &split.test, cfg));
            match result {
                Ok(m) => {
                    log::info!(
                        "variant {v} fold {fold}: mAP {:?} NME {:.4} FR {:.3}",
                        m.map,
                        m.landmarks.mean,
                        m.landmarks.failure_rate
                    );
                    done.push(m)
                }
                Err(e) => {
                    log::warn!("variant {v} fold {fold} failed: {e}");
                    failed.push(FoldFailure {
                        fold,
                        error: e.to_string(),
                    });
                }
            }
        }
        if done.is_empty() {
            let reasons: Vec<String> = failed.iter().map(|f| format!("fold {}: {}", f.fold, f.error)).collect();
            return Err(PipelineError::Invalid(format!("every fold failed: {}", reasons.join("; "))));
        }
        let config = serde_json::json!({
            "detector": cfg.detector,
            "landmarks": lm_cfg,
            "margin": cfg.margin,
            "iou_threshold": cfg.iou_threshold,
            "confidence_threshold": cfg.confidence_threshold,
            "failure_threshold": cfg.failure_threshold,
            "augmentation": cfg.augmentation,
            "seed": cfg.seed,
            "fold_plan": {"seed": plan.seed, "k": plan.k, "val_frac": plan.val_frac},
        });
        let mut report = aggregate_folds(&done, config)?;
        report.failed_folds = failed;
        variants.push(report);
    }
    let ablation = cfg
        .landmarks
        .iter()
        .zip(&variants)
        .map(|(c, r)| AblationRow {
            stream_widths: c.stream_widths.clone(),
            nme_mean: r.nme_mean,
            nme_std: r.nme_std,
            fr_at_0p1: r.fr_at_0p1,
            mse_mean: r.mse_mean,
            failed_folds: r.failed_folds.len(),
        })
        .collect();
    Ok(EvalOutput {
        report: variants[0].clone(),
        variants,
        ablation,
    })
}

/// Models trained for one fold and variant.
#[derive(Debug, Clone)]
pub struct FoldModels {
    pub fold: usize,
    pub variant: usize,
    pub detector: TrainedModel,
    pub landmarks: TrainedModel,
}

/// Trains the real networks. The detector is trained once per fold and
/// shared across landmark variants.
pub struct ModelTrainer {
    pub config: EvalConfig,
    /// Keep every trained pair in [`ModelTrainer::trained`].
    pub keep_models: bool,
    pub trained: Vec<FoldModels>,
    detectors: BTreeMap<usize, TrainedModel>,
}

impl ModelTrainer {
    pub fn new(config: EvalConfig) -> Self {
        Self {
            config,
            keep_models: false,
            trained: Vec::new(),
            detectors: BTreeMap::new(),
        }
    }

    fn fold_seed(&self, fold: usize) -> u64 {
        self.config.seed ^ (fold as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
    }

    pub fn train_detector(&self, split: &FoldSplit, data: &Dataset) -> Result<TrainedModel, PipelineError> {
        let cfg = &self.config.detector;
        let seed = self.fold_seed(split.fold);
        let train = split.train.iter().map(|id| data.get(id)).collect::<Result<Vec<_>, _>>()?;
        let val = split
            .val
            .iter()
            .map(|id| {
                let (r, img) = data.get(id)?;
                detection_sample(r, img, cfg, None)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let aug = self.config.augmentation;
        let provider = |epoch: usize| {
            train
                .iter()
                .enumerate()
                .filter_map(|(i, (r, img))| {
                    with_redraw(sample_seed(seed, epoch, i), aug.as_ref(), |s| detection_sample(r, img, cfg, s)).ok()
                })
                .collect()
        };
        let fold = split.fold;
        Ok(train_detector(
            cfg,
            TrainRequest {
                seed,
                data_hash: data.hash_of(&split.train),
                provider,
                val: &val,
            },
            |r| log::info!("fold {fold} detector epoch {}: train {:.4} val {:.4}", r.epoch, r.train_loss, r.val_loss),
        )?)
    }

    pub fn train_landmarks(&self, split: &FoldSplit, data: &Dataset, cfg: &LandmarkNetConfig) -> Result<TrainedModel, PipelineError> {
        let seed = self.fold_seed(split.fold).wrapping_add(17);
        let margin = self.config.margin;
        let train = split.train.iter().map(|id| data.get(id)).collect::<Result<Vec<_>, _>>()?;
        let val = split
            .val
            .iter()
            .map(|id| {
                let (r, img) = data.get(id)?;
                landmark_sample(r, img, &r.gt_box, cfg, margin, None)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let aug = self.config.augmentation;
        let provider = |epoch: usize| {
            train
                .iter()
                .enumerate()
                .filter_map(|(i, (r, img))| {
                    with_redraw(sample_seed(seed, epoch, i), aug.as_ref(), |s| {
                        landmark_sample(r, img, &r.gt_box, cfg, margin, s)
                    })
                    .ok()
                })
                .collect()
        };
        let fold = split.fold;
        Ok(train_landmarks(
            cfg,
            TrainRequest {
                seed,
                data_hash: data.hash_of(&split.train),
                provider,
                val: &val,
            },
            |r| {
                log::info!(
                    "fold {fold} landmarks epoch {} lr {:e}: train {:.5} val {:.5}",
                    r.epoch,
                    r.lr,
                    r.train_loss,
                    r.val_loss
                )
            },
        )?)
    }
}

impl FoldTrainer for ModelTrainer {
    fn train(&mut self, split: &FoldSplit, data: &Dataset, variant: usize) -> Result<Box<dyn Predictor>, PipelineError> {
        let lm_cfg = self
            .config
            .landmarks
            .get(variant)
            .cloned()
            .ok_or_else(|| PipelineError::Invalid(format!("no landmark config {variant}")))?;
        let detector = match self.detectors.get(&split.fold) {
            Some(d) => d.clone(),
            None => {
                let d = self.train_detector(split, data)?;
                self.detectors.insert(split.fold, d.clone());
                d
            }
        };
        let landmarks = self.train_landmarks(split, data, &lm_cfg)?;
        let mut scorer = Scorer::new(&detector, &landmarks)?;
        scorer.margin = self.config.margin;
        if self.keep_models {
            self.trained.push(FoldModels {
                fold: split.fold,
                variant,
                detector,
                landmarks,
            });
        }
        Ok(Box::new(scorer))
    }
}
