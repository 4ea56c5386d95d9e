//! Detection scoring: greedy matching against ground truth, average
//! precision on 40 recall points, and recall bucketed by per-object
//! point counts.

use serde::{Deserialize, Serialize};

use crate::assignment::GroundTruth;
use crate::geometry::{box_corners_bev, clip_convex, rotated_iou_bev, Box3D, DEGENERATE_AREA};
use crate::inference::{detection_order, Detection};
use crate::{Error, Result};

/// Overlap measure used for matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouKind {
    Bev,
    /// Exact volumetric IoU for upright boxes: BEV intersection area
    /// times vertical overlap, over the union volume.
    Volumetric,
}

pub fn volumetric_iou(a: &Box3D, b: &Box3D) -> f64 {
    let inter_area = clip_convex(&box_corners_bev(a), &box_corners_bev(b)).area();
    let overlap_h = a.z_max().min(b.z_max()) - a.z_min().max(b.z_min());
    let inter = inter_area * overlap_h.max(0.0);
    if inter < DEGENERATE_AREA {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 1.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

pub fn iou(a: &Box3D, b: &Box3D, kind: IouKind) -> f64 {
    match kind {
        IouKind::Bev => rotated_iou_bev(a, b),
        IouKind::Volumetric => volumetric_iou(a, b),
    }
}

/// Outcome of matching one scene's detections of one class against its
/// ground truth. Entries follow the canonical detection order (score
/// descending with the total tie-break), recorded in `order` as indices
/// into the input slice.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub order: Vec<usize>,
    /// True positive flag per detection, aligned with `order`.
    pub tp: Vec<bool>,
    /// Matched ground-truth index per detection, aligned with `order`.
    pub matched_gt: Vec<Option<usize>>,
    /// Matched flag per ground-truth box.
    pub gt_matched: Vec<bool>,
}

/// Greedy score-ordered matching: each detection takes the unmatched
/// ground truth with the highest IoU at or above the threshold (ties to
/// the lower index); everything else is a false positive. Input
/// permutation cannot change the outcome because detections are ranked
/// with a total tie-break first.
pub fn match_detections(
    dets: &[Detection],
    gts: &[Box3D],
    iou_threshold: f64,
    kind: IouKind,
) -> MatchResult {
    let mut ranked: Vec<(usize, Detection)> = dets.iter().cloned().enumerate().collect();
    ranked.sort_by(|a, b| detection_order(&a.1, &b.1));

    let mut gt_matched = vec![false; gts.len()];
    let mut order = Vec::with_capacity(dets.len());
    let mut tp = Vec::with_capacity(dets.len());
    let mut matched_gt = Vec::with_capacity(dets.len());
    for (idx, det) in ranked {
        let mut best: Option<(f64, usize)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_matched[g] {
                continue;
            }
            let overlap = iou(&det.box3d, gt, kind);
            if overlap < iou_threshold {
                continue;
            }
            // Strictly-greater keeps the lowest index on exact ties.
            if best.is_none_or(|(b, _)| overlap > b) {
                best = Some((overlap, g));
            }
        }
        order.push(idx);
        match best {
            Some((_, g)) => {
                gt_matched[g] = true;
                tp.push(true);
                matched_gt.push(Some(g));
            }
            None => {
                tp.push(false);
                matched_gt.push(None);
            }
        }
    }
    MatchResult {
        order,
        tp,
        matched_gt,
        gt_matched,
    }
}

/// Average precision interpolated at the 40 recall points k/40. Scored
/// detections may span scenes; `num_gt` = 0 has no defined AP.
pub fn ap40(scored: &[(f64, bool)], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut ranked = scored.to_vec();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    // Precision/recall after each prefix of the ranked list.
    let mut curve = Vec::with_capacity(ranked.len());
    let mut tp_cum = 0usize;
    for (rank, (_, is_tp)) in ranked.iter().enumerate() {
        if *is_tp {
            tp_cum += 1;
        }
        let precision = tp_cum as f64 / (rank + 1) as f64;
        let recall = tp_cum as f64 / num_gt as f64;
        curve.push((recall, precision));
    }
    let mut total = 0.0;
    for k in 1..=40 {
        let r = k as f64 / 40.0;
        let p_interp = curve
            .iter()
            .filter(|(recall, _)| *recall >= r - 1e-12)
            .map(|(_, precision)| *precision)
            .fold(0.0, f64::max);
        total += p_interp;
    }
    Some(total / 40.0)
}

/// Half-open-ended point-count bucket: `min..=max`, or `min` and up when
/// `max` is None.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointBucket {
    pub min: u32,
    pub max: Option<u32>,
}

impl PointBucket {
    pub fn contains(&self, n: u32) -> bool {
        n >= self.min && self.max.is_none_or(|hi| n <= hi)
    }

    pub fn label(&self) -> String {
        match self.max {
            Some(hi) => format!("{}-{}", self.min, hi),
            None => format!("{}+", self.min),
        }
    }
}

/// Default buckets: 1-10, 11-50, 51-200, 200+ points.
pub fn default_buckets() -> Vec<PointBucket> {
    vec![
        PointBucket { min: 1, max: Some(10) },
        PointBucket { min: 11, max: Some(50) },
        PointBucket { min: 51, max: Some(200) },
        PointBucket { min: 201, max: None },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRecall {
    pub bucket: PointBucket,
    pub num_gt: usize,
    pub matched: usize,
    /// Absent when the bucket holds no ground truth.
    pub recall: Option<f64>,
}

/// Recall restricted to ground truth whose point count falls in each
/// bucket. `matched` flags must align with `gts`. Empty buckets report
/// an absent recall, not zero.
pub fn recall_by_points(
    gts: &[GroundTruth],
    matched: &[bool],
    buckets: &[PointBucket],
) -> Vec<BucketRecall> {
    assert_eq!(gts.len(), matched.len(), "one matched flag per ground truth");
    buckets
        .iter()
        .map(|bucket| {
            let mut num_gt = 0;
            let mut hit = 0;
            for (gt, &m) in gts.iter().zip(matched) {
                if bucket.contains(gt.num_points) {
                    num_gt += 1;
                    if m {
                        hit += 1;
                    }
                }
            }
            BucketRecall {
                bucket: *bucket,
                num_gt,
                matched: hit,
                recall: (num_gt > 0).then(|| hit as f64 / num_gt as f64),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_kind: IouKind,
    /// Matching IoU threshold per class id; classes beyond the list use
    /// `default_threshold`.
    pub class_thresholds: Vec<f64>,
    pub default_threshold: f64,
    pub buckets: Vec<PointBucket>,
}

impl EvalConfig {
    /// KITTI protocol: volumetric IoU, 0.7 for class 0 (car), 0.5 for
    /// classes 1 and 2 (pedestrian, cyclist).
    pub fn kitti() -> Self {
        EvalConfig {
            iou_kind: IouKind::Volumetric,
            class_thresholds: vec![0.7, 0.5, 0.5],
            default_threshold: 0.5,
            buckets: default_buckets(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for &t in self.class_thresholds.iter().chain([&self.default_threshold]) {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::invalid_config(format!(
                    "IoU thresholds must lie in (0, 1], got {t}"
                )));
            }
        }
        Ok(())
    }

    pub fn threshold_for(&self, class_id: u32) -> f64 {
        self.class_thresholds
            .get(class_id as usize)
            .copied()
            .unwrap_or(self.default_threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: u32,
    pub num_gt: usize,
    pub num_detections: usize,
    pub true_positives: usize,
    /// Absent when the class has no ground truth.
    pub ap40: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassMetrics>,
    pub recall_buckets: Vec<BucketRecall>,
}

/// Full evaluation over scenes: per-class AP40 across all scenes plus
/// point-count recall buckets over all ground truth.
pub fn evaluate_scenes(
    scenes: &[(Vec<Detection>, Vec<GroundTruth>)],
    num_classes: usize,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let mut per_class = Vec::with_capacity(num_classes);
    // Matched flag per (scene, gt index), shared by every class pass.
    let mut matched: Vec<Vec<bool>> = scenes.iter().map(|(_, g)| vec![false; g.len()]).collect();
    for class_id in 0..num_classes as u32 {
        let threshold = cfg.threshold_for(class_id);
        let mut scored: Vec<(f64, bool)> = Vec::new();
        let mut num_gt = 0;
        let mut tp_count = 0;
        for (scene_idx, (dets, gts)) in scenes.iter().enumerate() {
            let class_dets: Vec<Detection> = dets
                .iter()
                .filter(|d| d.class_id == class_id)
                .cloned()
                .collect();
            let gt_indices: Vec<usize> = (0..gts.len())
                .filter(|&g| gts[g].class_id == class_id)
                .collect();
            let gt_boxes: Vec<Box3D> = gt_indices.iter().map(|&g| gts[g].box3d).collect();
            num_gt += gt_boxes.len();
            let result = match_detections(&class_dets, &gt_boxes, threshold, cfg.iou_kind);
            for (pos, &det_idx) in result.order.iter().enumerate() {
                scored.push((class_dets[det_idx].score, result.tp[pos]));
                if result.tp[pos] {
                    tp_count += 1;
                }
            }
            for (local, &global) in gt_indices.iter().enumerate() {
                if result.gt_matched[local] {
                    matched[scene_idx][global] = true;
                }
            }
        }
        per_class.push(ClassMetrics {
            class_id,
            num_gt,
            num_detections: scored.len(),
            true_positives: tp_count,
            ap40: ap40(&scored, num_gt),
        });
    }
    let all_gts: Vec<GroundTruth> = scenes.iter().flat_map(|(_, g)| g.iter().copied()).collect();
    let all_matched: Vec<bool> = matched.into_iter().flatten().collect();
    let recall_buckets = recall_by_points(&all_gts, &all_matched, &cfg.buckets);
    Ok(EvalReport {
        per_class,
        recall_buckets,
    })
}
