//! Head output to final detections: per-cell class argmax, confidence
//! filtering, top-k, and greedy per-class rotated NMS.
//!
//! Every ordering uses a total tie-break (score, then row-major cell,
//! then class), so results do not depend on input permutation.

use serde::{Deserialize, Serialize};

use crate::codec::{decode_box, HeadOutput};
use crate::geometry::{rotated_iou_bev, Box3D};
use crate::voxelizer::GridConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: u32,
    pub score: f64,
    pub box3d: Box3D,
    /// BEV cell the detection fired at; used only as an ordering
    /// tie-break. Detections built outside the grid may leave it (0, 0).
    #[serde(default)]
    pub cell: (usize, usize),
}

impl Detection {
    pub fn new(class_id: u32, score: f64, box3d: Box3D) -> Self {
        Detection {
            class_id,
            score,
            box3d,
            cell: (0, 0),
        }
    }

}

/// Total detection ordering, best first: score descending, then
/// row-major cell, then class id.
pub fn detection_order(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.cell.cmp(&b.cell))
        .then(a.class_id.cmp(&b.class_id))
}

/// Sorts detections best-first by `detection_order`.
pub fn sort_detections(dets: &mut [Detection]) {
    dets.sort_by(detection_order);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub score_threshold: f64,
    pub pre_nms_top_k: usize,
    pub nms_iou_threshold: f64,
}

impl InferenceConfig {
    pub fn new(score_threshold: f64, pre_nms_top_k: usize, nms_iou_threshold: f64) -> Result<Self> {
        let cfg = InferenceConfig {
            score_threshold,
            pre_nms_top_k,
            nms_iou_threshold,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// KITTI settings: confidence 0.3, 100 proposals, NMS IoU 0.01.
    pub fn kitti() -> Self {
        InferenceConfig {
            score_threshold: 0.3,
            pre_nms_top_k: 100,
            nms_iou_threshold: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("score_threshold", self.score_threshold),
            ("nms_iou_threshold", self.nms_iou_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid_config(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        if self.pre_nms_top_k == 0 {
            return Err(Error::invalid_config("pre_nms_top_k must be >= 1"));
        }
        Ok(())
    }
}

/// Pulls candidate detections out of a head output: per cell, the argmax
/// class (ties to the lower class id) survives if its score reaches the
/// threshold and its box decodes cleanly; the best `pre_nms_top_k`
/// overall are kept.
pub fn extract_candidates(
    out: &HeadOutput,
    cfg: &InferenceConfig,
    grid: &GridConfig,
) -> Result<Vec<Detection>> {
    cfg.validate()?;
    out.validate()?;
    let dims = grid.output_dims();
    if (out.rows(), out.cols()) != dims {
        return Err(Error::ShapeMismatch(format!(
            "head is {}x{}, grid expects {}x{}",
            out.rows(),
            out.cols(),
            dims.0,
            dims.1
        )));
    }
    let mut dets = Vec::new();
    for i in 0..out.rows() {
        for j in 0..out.cols() {
            let scores = out.class_scores.cell(i, j);
            let (class_id, &score) = scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .expect("head has at least one class");
            if score < cfg.score_threshold {
                continue;
            }
            // A cell whose box does not decode (non-finite size) is dropped
            // rather than failing the scene.
            let Ok(box3d) = decode_box((i, j), out, grid) else {
                continue;
            };
            dets.push(Detection {
                class_id: class_id as u32,
                score,
                box3d,
                cell: (i, j),
            });
        }
    }
    sort_detections(&mut dets);
    dets.truncate(cfg.pre_nms_top_k);
    Ok(dets)
}

/// Greedy rotated NMS in BEV, applied per class: walking detections
/// best-first, a detection survives iff its footprint IoU with every
/// already-kept detection of its class is at or below the threshold.
pub fn rotated_nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sort_detections(&mut sorted);
    let mut kept: Vec<Detection> = Vec::new();
    for det in sorted {
        let suppressed = kept.iter().any(|k| {
            k.class_id == det.class_id && rotated_iou_bev(&k.box3d, &det.box3d) > iou_threshold
        });
        if !suppressed {
            kept.push(det);
        }
    }
    kept
}
