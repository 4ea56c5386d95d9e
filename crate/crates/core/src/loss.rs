//! Training losses: focal classification, smooth-L1 box regression
//! through the soft argmin, and the auxiliary spatial-relation loss.
//! Every loss returns its analytic gradient with respect to the head
//! values it consumes.
//!
//! Masking contract: ignored cells are skipped outright, so their scores
//! influence neither the loss value nor any gradient entry, bit for bit.
//! Classification averages over contributing (non-ignored) cells;
//! regression and relation losses average over hotspot count. All
//! reductions are fixed-order sequential sums, so results are
//! reproducible.

use serde::{Deserialize, Serialize};

use crate::assignment::{AssignmentMap, CellState, RelationEncoding};
use crate::codec::{softargmin_grad, HeadOutput, RegChannel, TARGET_COMPONENTS};
use crate::field::Field;
use crate::{Error, Result};

/// Probabilities are clamped to [EPS, 1 - EPS] before any log.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl FocalParams {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        let fp = FocalParams { alpha, gamma };
        fp.validate()?;
        Ok(fp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid_config(format!(
                "focal alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid_config(format!(
                "focal gamma must be a nonnegative real, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub delta: f64,
    pub beta: f64,
    pub zeta: f64,
}

impl LossWeights {
    pub fn new(delta: f64, beta: f64, zeta: f64) -> Result<Self> {
        let w = LossWeights { delta, beta, zeta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.delta, self.beta, self.zeta];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid_config(format!(
                "loss weights must be nonnegative reals, got {self:?}"
            )));
        }
        if all.iter().all(|v| *v == 0.0) {
            return Err(Error::invalid_config("loss weights must not all be zero"));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            delta: 1.0,
            beta: 1.0,
            zeta: 1.0,
        }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Focal loss of a single score and its derivative d loss / d p.
///
/// With q = p for a hotspot and q = 1 - p otherwise, the loss is
/// -alpha (1-q)^gamma log(q). The derivative is taken at the clamped
/// probability; clamping only activates within EPS of 0 or 1.
pub fn focal_loss(p: f64, is_hotspot: bool, fp: &FocalParams) -> (f64, f64) {
    let p = clamp_prob(p);
    let q = if is_hotspot { p } else { 1.0 - p };
    let one_minus_q = 1.0 - q;
    let loss = -fp.alpha * one_minus_q.powf(fp.gamma) * q.ln();
    let down_weight_term = if fp.gamma == 0.0 {
        0.0
    } else {
        fp.alpha * fp.gamma * one_minus_q.powf(fp.gamma - 1.0) * q.ln()
    };
    let dloss_dq = down_weight_term - fp.alpha * one_minus_q.powf(fp.gamma) / q;
    let dq_dp = if is_hotspot { 1.0 } else { -1.0 };
    (loss, dloss_dq * dq_dp)
}

/// Smooth L1 and its derivative: 0.5 x^2 inside |x| < 1, |x| - 0.5 outside.
pub fn smooth_l1(x: f64) -> (f64, f64) {
    if x.abs() < 1.0 {
        (0.5 * x * x, x)
    } else {
        (x.abs() - 0.5, x.signum())
    }
}

/// Binary cross-entropy of one score against a {0, 1} target, with the
/// derivative d loss / d p at the clamped probability.
pub fn binary_cross_entropy(p: f64, target: f64) -> (f64, f64) {
    let p = clamp_prob(p);
    let loss = -(target * p.ln() + (1.0 - target) * (1.0 - p).ln());
    let grad = -target / p + (1.0 - target) / (1.0 - p);
    (loss, grad)
}

fn check_cell_shape(name: &str, field: &Field, map: &AssignmentMap, width: usize) -> Result<()> {
    if field.rows() != map.rows() || field.cols() != map.cols() || field.width() != width {
        return Err(Error::ShapeMismatch(format!(
            "{name} is {}x{}x{}, expected {}x{}x{width}",
            field.rows(),
            field.cols(),
            field.width(),
            map.rows(),
            map.cols()
        )));
    }
    Ok(())
}

/// Focal classification loss over all K scores of every non-ignored cell,
/// averaged over the number of contributing cells. The positive entry of
/// a hotspot cell is its owner's class; all other entries are negatives.
pub fn classification_loss(
    scores: &Field,
    map: &AssignmentMap,
    fp: &FocalParams,
) -> Result<(f64, Field)> {
    fp.validate()?;
    check_cell_shape("class scores", scores, map, map.num_classes())?;
    let mut grad = Field::zeros(scores.rows(), scores.cols(), scores.width());
    let denom = map.num_classified_cells();
    if denom == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / denom as f64;
    let mut total = 0.0;
    for i in 0..map.rows() {
        for j in 0..map.cols() {
            let hotspot_class = match map.state(i, j) {
                CellState::Ignored => continue,
                CellState::Negative => None,
                CellState::Hotspot { class_id, .. } => Some(class_id as usize),
            };
            let cell = scores.cell(i, j);
            let grad_cell = grad.cell_mut(i, j);
            for (k, &p) in cell.iter().enumerate() {
                let (loss, dp) = focal_loss(p, hotspot_class == Some(k), fp);
                total += loss;
                grad_cell[k] = dp * inv;
            }
        }
    }
    Ok((total * inv, grad))
}

/// Smooth-L1 regression loss summed over the 8 components of every
/// hotspot cell and averaged over hotspot count. Binned channels compare
/// the soft-argmin value against the target, with the gradient chained
/// through the soft argmin onto the logits.
pub fn regression_loss(pred: &HeadOutput, map: &AssignmentMap) -> Result<(f64, Field)> {
    pred.validate()?;
    check_cell_shape("regression field", &pred.reg, map, pred.layout.reg_width())?;
    let mut grad = Field::zeros(pred.reg.rows(), pred.reg.cols(), pred.reg.width());
    let denom = map.num_hotspots();
    if denom == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / denom as f64;
    let mut total = 0.0;
    for (&(i, j), target) in map.hotspots() {
        for k in 0..TARGET_COMPONENTS {
            let off = pred.layout.channel_offset(k);
            let value = pred.reg_value(i, j, k);
            let (loss, dvalue) = smooth_l1(value - target.box_targets.component(k));
            total += loss;
            match &pred.layout.channels[k] {
                RegChannel::Raw => {
                    grad.cell_mut(i, j)[off] += dvalue * inv;
                }
                RegChannel::Binned(spec) => {
                    let chain = softargmin_grad(pred.reg_slice(i, j, k), spec);
                    let grad_cell = grad.cell_mut(i, j);
                    for (b, g) in chain.iter().enumerate() {
                        grad_cell[off + b] += dvalue * g * inv;
                    }
                }
            }
        }
    }
    Ok((total * inv, grad))
}

/// Auxiliary spatial-relation loss over hotspot cells, averaged over
/// hotspot count. Categorical encodings use per-channel binary
/// cross-entropy against the one-hot target; the deviation encoding uses
/// smooth L1 on the normalized offset pair.
pub fn relation_loss(scores: &Field, map: &AssignmentMap) -> Result<(f64, Field)> {
    let arity = map.encoding().arity();
    check_cell_shape("relation scores", scores, map, arity)?;
    let mut grad = Field::zeros(scores.rows(), scores.cols(), arity);
    let denom = map.num_hotspots();
    if map.encoding() == RelationEncoding::None || denom == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / denom as f64;
    let mut total = 0.0;
    for (&(i, j), target) in map.hotspots() {
        let targets = target.relation.channel_targets(map.encoding());
        debug_assert_eq!(targets.len(), arity);
        let cell = scores.cell(i, j);
        let grad_cell = grad.cell_mut(i, j);
        for (k, (&p, &t)) in cell.iter().zip(targets.iter()).enumerate() {
            let (loss, dp) = if map.encoding().is_categorical() {
                binary_cross_entropy(p, t)
            } else {
                smooth_l1(p - t)
            };
            total += loss;
            grad_cell[k] = dp * inv;
        }
    }
    Ok((total * inv, grad))
}

/// The quadrant classification loss: `relation_loss` specialized to the
/// four-way quadrant encoding.
pub fn quadrant_loss(scores: &Field, map: &AssignmentMap) -> Result<(f64, Field)> {
    if map.encoding() != RelationEncoding::Quadrant {
        return Err(Error::invalid_config(format!(
            "quadrant loss needs a quadrant-encoded assignment, got {:?}",
            map.encoding()
        )));
    }
    relation_loss(scores, map)
}

/// L = delta * L_cls + beta * L_loc + zeta * L_relation.
pub fn total_loss(cls: f64, loc: f64, relation: f64, w: &LossWeights) -> f64 {
    w.delta * cls + w.beta * loc + w.zeta * relation
}
