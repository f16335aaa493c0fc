use post_core::metrics::iou;
use post_core::{BoundingBox, Scalar};

/// Drops boxes below `conf_threshold`, then keeps boxes in descending
/// confidence order unless they overlap an already kept box with IoU above
/// `iou_threshold`. Equal confidences keep input order.
pub fn nms<T: Scalar>(boxes: &[BoundingBox<T>], iou_threshold: T, conf_threshold: T) -> Vec<BoundingBox<T>> {
    let mut candidates: Vec<BoundingBox<T>> = boxes.iter().filter(|b| b.confidence >= conf_threshold).copied().collect();
    candidates.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap_or(std::cmp::Ordering::Equal));
    let mut kept: Vec<BoundingBox<T>> = Vec::new();
    for c in candidates {
        if kept.iter().all(|k| iou(k, &c) <= iou_threshold) {
            kept.push(c);
        }
    }
    kept
}
