//! Detection metrics (IoU, AP/mAP, sensitivity), landmark metrics (NME,
//! failure rate) and the fold-level report.

use serde::{Deserialize, Serialize};

use crate::geometry::{BoundingBox, LandmarkSet};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("no ground-truth boxes: average precision is undefined")]
    EmptyGroundTruth,
    #[error("empty input")]
    EmptyInput,
    #[error("ground-truth glanular diameter {0} is below the normaliser threshold")]
    DegenerateNormalizer(f64),
    #[error("prediction and ground truth are in different frames")]
    FrameMismatch,
    #[error("threshold {0} must lie in (0, 1)")]
    InvalidThreshold(f64),
}

/// Default IoU for a detection to count as a hit.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
/// Default confidence operating point for sensitivity.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.25;
/// NME above which an image counts as a failure.
pub const DEFAULT_FAILURE_THRESHOLD: f64 = 0.1;
/// Minimum glanular diameter (pixels) accepted as an NME normaliser.
pub const NORMALIZER_EPS: f64 = 1e-6;

/// Intersection over union; 0 for disjoint or empty boxes.
pub fn iou<T: Scalar>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> T {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(T::zero());
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(T::zero());
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        T::zero()
    } else {
        inter / union
    }
}

/// Detections and ground truth for one image (single class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DetectionRecord<T> {
    pub image_id: String,
    pub predictions: Vec<BoundingBox<T>>,
    pub ground_truth: Vec<BoundingBox<T>>,
}

/// One prediction after greedy matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPrediction<T> {
    pub record: usize,
    pub prediction: usize,
    pub confidence: T,
    pub true_positive: bool,
}

fn check_threshold<T: Scalar>(t: T) -> Result<(), MetricsError> {
    if t > T::zero() && t < T::one() {
        Ok(())
    } else {
        Err(MetricsError::InvalidThreshold(t.to_f64_lossy()))
    }
}

/// Visits predictions with confidence ≥ `min_confidence` in descending
/// confidence order (stable on input order) and greedily assigns each to the
/// highest-IoU unmatched ground truth of its image when that IoU reaches
/// `iou_threshold`.
pub fn greedy_match<T: Scalar>(
    records: &[DetectionRecord<T>],
    iou_threshold: T,
    min_confidence: T,
) -> Vec<MatchedPrediction<T>> {
    let mut order: Vec<(usize, usize, T)> = records
        .iter()
        .enumerate()
        .flat_map(|(r, rec)| {
            rec.predictions
                .iter()
                .enumerate()
                .filter(move |(_, p)| p.confidence >= min_confidence)
                .map(move |(i, p)| (r, i, p.confidence))
        })
        .collect();
    order.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(std::cmp::Ordering::Equal));
    let mut taken: Vec<Vec<bool>> = records.iter().map(|r| vec![false; r.ground_truth.len()]).collect();
    order
        .into_iter()
        .map(|(r, i, confidence)| {
            let pred = &records[r].predictions[i];
            let mut best: Option<(usize, T)> = None;
            for (g, gt) in records[r].ground_truth.iter().enumerate() {
                if taken[r][g] {
                    continue;
                }
                let v = iou(pred, gt);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            let true_positive = match best {
                Some((g, v)) if v >= iou_threshold => {
                    taken[r][g] = true;
                    true
                }
                _ => false,
            };
            MatchedPrediction {
                record: r,
                prediction: i,
                confidence,
                true_positive,
            }
        })
        .collect()
}

/// Area under the interpolated precision–recall curve (every recall step,
/// precision replaced by its running maximum from the right).
pub fn average_precision<T: Scalar>(records: &[DetectionRecord<T>], iou_threshold: T) -> Result<T, MetricsError> {
    check_threshold(iou_threshold)?;
    let total_gt: usize = records.iter().map(|r| r.ground_truth.len()).sum();
    if total_gt == 0 {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let matched = greedy_match(records, iou_threshold, T::neg_infinity());
    let mut tp = 0usize;
    let mut curve: Vec<(T, T)> = Vec::with_capacity(matched.len());
    for (i, m) in matched.iter().enumerate() {
        if m.true_positive {
            tp += 1;
        }
        // tied confidences form one operating point
        if matched.get(i + 1).is_some_and(|next| next.confidence == m.confidence) {
            continue;
        }
        let recall = T::of(tp as f64) / T::of(total_gt as f64);
        let precision = T::of(tp as f64) / T::of((i + 1) as f64);
        curve.push((recall, precision));
    }
    Ok(interpolated_area(&curve))
}

/// `curve` is (recall, precision) in visiting order; recall is
/// non-decreasing.
pub(crate) fn interpolated_area<T: Scalar>(curve: &[(T, T)]) -> T {
    let mut envelope: Vec<T> = curve.iter().map(|c| c.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut area = T::zero();
    let mut prev_recall = T::zero();
    for (i, (recall, _)) in curve.iter().enumerate() {
        if *recall > prev_recall {
            area = area + (*recall - prev_recall) * envelope[i];
            prev_recall = *recall;
        }
    }
    area
}

/// Mean of per-class APs.
pub fn mean_average_precision<T: Scalar>(aps: &[T]) -> Result<T, MetricsError> {
    if aps.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(aps.iter().fold(T::zero(), |a, b| a + *b) / T::of(aps.len() as f64))
}

/// Fraction of ground-truth boxes matched by a prediction with confidence
/// at least `confidence_threshold`.
pub fn sensitivity<T: Scalar>(
    records: &[DetectionRecord<T>],
    iou_threshold: T,
    confidence_threshold: T,
) -> Result<T, MetricsError> {
    check_threshold(iou_threshold)?;
    check_threshold(confidence_threshold)?;
    let total_gt: usize = records.iter().map(|r| r.ground_truth.len()).sum();
    if total_gt == 0 {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let tp = greedy_match(records, iou_threshold, confidence_threshold)
        .iter()
        .filter(|m| m.true_positive)
        .count();
    Ok(T::of(tp as f64) / T::of(total_gt as f64))
}

/// Mean over the five landmarks of the point error divided by the
/// ground-truth |CC'|.
pub fn nme<T: Scalar>(pred: &LandmarkSet<T>, gt: &LandmarkSet<T>) -> Result<T, MetricsError> {
    if pred.frame != gt.frame {
        return Err(MetricsError::FrameMismatch);
    }
    let d = gt.glanular_diameter();
    if !(d >= T::of(NORMALIZER_EPS)) {
        return Err(MetricsError::DegenerateNormalizer(d.to_f64_lossy()));
    }
    let sum = pred
        .points()
        .iter()
        .zip(gt.points().iter())
        .fold(T::zero(), |acc, (p, g)| acc + p.distance(*g));
    Ok(sum / (T::of(5.0) * d))
}

/// Fraction of values strictly above `threshold`.
pub fn failure_rate<T: Scalar>(nmes: &[T], threshold: T) -> Result<T, MetricsError> {
    if nmes.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let failures = nmes.iter().filter(|v| **v > threshold).count();
    Ok(T::of(failures as f64) / T::of(nmes.len() as f64))
}

/// Mean and population standard deviation (two-pass).
pub fn mean_std<T: Scalar>(values: &[T]) -> Result<(T, T), MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = T::of(values.len() as f64);
    let mean = values.iter().fold(T::zero(), |a, b| a + *b) / n;
    let var = values.iter().fold(T::zero(), |a, b| a + (*b - mean) * (*b - mean)) / n;
    Ok((mean, var.sqrt()))
}

/// Landmark metrics over one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NmeResult<T> {
    pub per_image_nme: Vec<T>,
    pub mean: T,
    pub std: T,
    pub failure_rate: T,
    /// Mean heatmap MSE over the same images.
    pub mse: T,
}

impl<T: Scalar> NmeResult<T> {
    pub fn from_per_image(per_image_nme: Vec<T>, mse: T, failure_threshold: T) -> Result<Self, MetricsError> {
        let (mean, std) = mean_std(&per_image_nme)?;
        let failure_rate = failure_rate(&per_image_nme, failure_threshold)?;
        Ok(Self {
            per_image_nme,
            mean,
            std,
            failure_rate,
            mse,
        })
    }
}

/// Detection and landmark metrics of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub landmarks: NmeResult<f64>,
    pub map: Option<f64>,
    pub sensitivity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub fold: usize,
    pub error: String,
}

/// Cross-fold summary. Landmark statistics are mean and population std of
/// the per-fold means; `fr_at_0p1` pools every evaluated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub nme_mean: f64,
    pub nme_std: f64,
    pub fr_at_0p1: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub map: Option<f64>,
    pub sensitivity: Option<f64>,
    pub config: serde_json::Value,
    pub folds: Vec<FoldMetrics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_folds: Vec<FoldFailure>,
    /// Figures reported for the clinical dataset this tool was designed
    /// around; informational only, never compared against.
    pub reference_clinical: ReferenceFigures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFigures {
    pub map: f64,
    pub sensitivity: f64,
    pub nme_mean: f64,
    pub nme_std: f64,
    pub fr_at_0p1: f64,
    pub mse: f64,
}

impl Default for ReferenceFigures {
    fn default() -> Self {
        Self {
            map: 0.995,
            sensitivity: 0.991,
            nme_mean: 0.07152,
            nme_std: 0.004,
            fr_at_0p1: 0.202,
            mse: 0.001,
        }
    }
}

pub fn aggregate_folds(per_fold: &[FoldMetrics], config: serde_json::Value) -> Result<EvalReport, MetricsError> {
    if per_fold.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut folds = per_fold.to_vec();
    folds.sort_by_key(|f| f.fold);
    let nme_means: Vec<f64> = folds.iter().map(|f| f.landmarks.mean).collect();
    let mses: Vec<f64> = folds.iter().map(|f| f.landmarks.mse).collect();
    let (nme_mean, nme_std) = mean_std(&nme_means)?;
    let (mse_mean, mse_std) = mean_std(&mses)?;
    let all: Vec<f64> = folds
        .iter()
        .flat_map(|f| f.landmarks.per_image_nme.iter().copied())
        .collect();
    let fr_at_0p1 = failure_rate(&all, DEFAULT_FAILURE_THRESHOLD)?;
    let mean_of = |xs: Vec<f64>| -> Option<f64> {
        if xs.is_empty() {
            None
        } else {
            Some(xs.iter().sum::<f64>() / xs.len() as f64)
        }
    };
    let map = mean_of(folds.iter().filter_map(|f| f.map).collect());
    let sensitivity = mean_of(folds.iter().filter_map(|f| f.sensitivity).collect());
    Ok(EvalReport {
        nme_mean,
        nme_std,
        fr_at_0p1,
        mse_mean,
        mse_std,
        map,
        sensitivity,
        config,
        folds,
        failed_folds: Vec::new(),
        reference_clinical: ReferenceFigures::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Frame, Point2};

    fn b(x0: f64, y0: f64, x1: f64, y1: f64, c: f64) -> BoundingBox<f64> {
        BoundingBox {
            x_min: x0,
            y_min: y0,
            x_max: x1,
            y_max: y1,
            confidence: c,
        }
    }

    fn rec(id: &str, preds: Vec<BoundingBox<f64>>, gts: Vec<BoundingBox<f64>>) -> DetectionRecord<f64> {
        DetectionRecord {
            image_id: id.into(),
            predictions: preds,
            ground_truth: gts,
        }
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 2.0, 2.0, 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(5.0, 5.0, 6.0, 6.0, 1.0)), 0.0);
        assert!((iou(&a, &b(1.0, 0.0, 3.0, 2.0, 1.0)) - 1.0 / 3.0).abs() < 1e-15);
        // containment gives the area ratio
        assert!((iou(&b(1.0, 1.0, 2.0, 2.0, 1.0), &b(0.0, 0.0, 4.0, 4.0, 1.0)) - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn ap_perfect_and_empty() {
        let gt = b(10.0, 10.0, 50.0, 50.0, 1.0);
        let perfect = vec![
            rec("a", vec![b(10.0, 10.0, 50.0, 50.0, 0.9)], vec![gt]),
            rec("b", vec![b(11.0, 10.0, 50.0, 51.0, 0.7)], vec![gt]),
        ];
        assert_eq!(average_precision(&perfect, 0.5).unwrap(), 1.0);
        let none = vec![rec("a", vec![], vec![gt])];
        assert_eq!(average_precision(&none, 0.5).unwrap(), 0.0);
        let no_gt = vec![rec("a", vec![gt], vec![])];
        assert_eq!(average_precision(&no_gt, 0.5), Err(MetricsError::EmptyGroundTruth));
        assert_eq!(mean_average_precision(&[0.8]).unwrap(), 0.8);
    }

    #[test]
    fn ap_mixed_case_by_hand() {
        // order: TP (0.9), FP (0.8), TP (0.7); 2 GT
        // PR points: (0.5, 1), (0.5, 0.5), (1.0, 2/3) → 0.5·1 + 0.5·2/3
        let g1 = b(0.0, 0.0, 10.0, 10.0, 1.0);
        let g2 = b(20.0, 20.0, 30.0, 30.0, 1.0);
        let records = vec![rec(
            "x",
            vec![
                b(0.0, 0.0, 10.0, 10.0, 0.9),
                b(50.0, 50.0, 60.0, 60.0, 0.8),
                b(20.0, 20.0, 30.0, 31.0, 0.7),
            ],
            vec![g1, g2],
        )];
        let ap = average_precision(&records, 0.5).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn sensitivity_examples() {
        let gt = b(0.0, 0.0, 10.0, 10.0, 1.0);
        let mut records: Vec<_> = (0..10)
            .map(|i| rec(&i.to_string(), vec![b(0.0, 0.0, 10.0, 10.0, 0.9)], vec![gt]))
            .collect();
        assert_eq!(sensitivity(&records, 0.5, 0.25).unwrap(), 1.0);
        records[3].predictions[0].confidence = 0.1;
        assert!((sensitivity(&records, 0.5, 0.25).unwrap() - 0.9).abs() < 1e-15);
        let empty: Vec<_> = (0..3).map(|i| rec(&i.to_string(), vec![], vec![gt])).collect();
        assert_eq!(sensitivity(&empty, 0.5, 0.25).unwrap(), 0.0);
    }

    fn set(points: [(f64, f64); 5]) -> LandmarkSet<f64> {
        LandmarkSet::from_points(points.map(|(x, y)| Point2::new(x, y)), Frame::Original)
    }

    #[test]
    fn nme_examples() {
        let gt = set([(0.0, 0.0), (-1.0, 1.0), (1.0, 1.0), (-2.0, 3.0), (2.0, 3.0)]);
        assert_eq!(nme(&gt, &gt).unwrap(), 0.0);
        let d = gt.glanular_diameter();
        let mut pred = gt;
        pred.a.y += d;
        assert_eq!(nme(&pred, &gt).unwrap(), 0.2);
        let degenerate = set([(0.0, 0.0), (-1.0, 1.0), (1.0, 1.0), (2.0, 3.0), (2.0, 3.0)]);
        assert!(matches!(nme(&gt, &degenerate), Err(MetricsError::DegenerateNormalizer(_))));
    }

    #[test]
    fn failure_rate_examples() {
        assert!((failure_rate::<f64>(&[0.05, 0.09, 0.11], 0.1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(failure_rate(&[0.01, 0.02], 0.1).unwrap(), 0.0);
        // strictly greater
        assert_eq!(failure_rate(&[0.1], 0.1).unwrap(), 0.0);
        assert_eq!(failure_rate::<f64>(&[], 0.1), Err(MetricsError::EmptyInput));
    }

    fn fold(i: usize, nme_mean: f64) -> FoldMetrics {
        FoldMetrics {
            fold: i,
            landmarks: NmeResult {
                per_image_nme: vec![nme_mean],
                mean: nme_mean,
                std: 0.0,
                failure_rate: 0.0,
                mse: 0.001,
            },
            map: Some(1.0),
            sensitivity: Some(1.0),
        }
    }

    #[test]
    fn aggregate_single_and_constant_folds() {
        let r = aggregate_folds(&[fold(0, 0.08)], serde_json::Value::Null).unwrap();
        assert_eq!(r.nme_mean, 0.08);
        assert_eq!(r.nme_std, 0.0);
        let five: Vec<_> = (0..5).map(|i| fold(i, 0.07)).collect();
        let r = aggregate_folds(&five, serde_json::Value::Null).unwrap();
        assert!((r.nme_mean - 0.07).abs() < 1e-15);
        assert!(r.nme_std < 1e-15);
        assert_eq!(r.folds.len(), 5);
        let json = serde_json::to_value(&r).unwrap();
        for key in ["nme_mean", "nme_std", "fr_at_0p1", "mse_mean", "mse_std", "map", "sensitivity", "config"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
    }
}
