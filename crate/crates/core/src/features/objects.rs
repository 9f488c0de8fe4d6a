//! Detection-box post-processing: IoU, greedy NMS, and the dominant-object
//! rule that gates visual-similarity boosting.

use serde::{Deserialize, Serialize};

use crate::corpus::Detection;

/// An image has a dominant object when its largest surviving box covers at
/// least this fraction of the image.
pub const DOMINANT_AREA_FRACTION: f64 = 0.25;
/// Smaller boxes still count as dominant at or above this confidence.
pub const DOMINANT_CONFIDENCE: f64 = 0.9;
/// NMS overlap threshold used throughout the pipeline.
pub const DEFAULT_NMS_IOU: f64 = 0.5;

/// Outcome of the dominant-object test. `object` is present iff `dominant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceResult {
    pub dominant: bool,
    pub object: Option<Detection>,
}

impl DominanceResult {
    fn negative() -> Self {
        DominanceResult {
            dominant: false,
            object: None,
        }
    }
}

/// Intersection-over-union of two boxes. Well-defined because box sizes are
/// strictly positive.
pub fn iou(a: &Detection, b: &Detection) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a.area() + b.area() - inter)
}

/// Greedy non-maximum suppression: repeatedly keep the highest-confidence
/// remaining box and discard boxes overlapping it with IoU strictly above
/// the threshold. Output is sorted by confidence descending; equal
/// confidences preserve input order.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].confidence.total_cmp(&detections[a].confidence));

    let mut kept: Vec<Detection> = Vec::new();
    for idx in order {
        let candidate = &detections[idx];
        if kept.iter().all(|k| iou(k, candidate) <= iou_threshold) {
            kept.push(candidate.clone());
        }
    }
    kept
}

/// Applies the dominant-object rule to post-NMS boxes: the largest-area box
/// is dominant iff it covers at least 25% of the image or its confidence is
/// at least 0.9.
pub fn dominant_object(detections: &[Detection]) -> DominanceResult {
    let Some(largest) = detections
        .iter()
        .max_by(|a, b| a.area().total_cmp(&b.area()))
    else {
        return DominanceResult::negative();
    };
    if largest.area() >= DOMINANT_AREA_FRACTION || largest.confidence >= DOMINANT_CONFIDENCE {
        DominanceResult {
            dominant: true,
            object: Some(largest.clone()),
        }
    } else {
        DominanceResult::negative()
    }
}
