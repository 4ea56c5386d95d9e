//! Box target encoding/decoding and the soft-argmin binned regression.
//!
//! A box is regressed as 8 components relative to its hotspot cell:
//! `[dx, dy, z, log_l, log_w, log_h, cos_r, sin_r]`. Any component may be
//! carried either as a single raw channel or as N bin logits decoded by a
//! soft argmin (softmax-weighted expectation over bin centers). Offsets
//! and height use bins by default; sizes and heading stay raw.

use serde::{Deserialize, Serialize};

use crate::assignment::{AssignmentMap, RelationEncoding};
use crate::field::Field;
use crate::geometry::{normalize_yaw, Box3D};
use crate::voxelizer::GridConfig;
use crate::{Error, Result};

/// Logit magnitude that saturates a softmax for practical purposes
/// (exp(-40) ~ 4e-18).
pub const SATURATED_LOGIT: f64 = 40.0;

pub const TARGET_COMPONENTS: usize = 8;
pub const COMPONENT_NAMES: [&str; TARGET_COMPONENTS] = [
    "dx", "dy", "z", "log_l", "log_w", "log_h", "cos_r", "sin_r",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxTargets {
    /// Object centroid minus hotspot centroid, axis-aligned meters.
    pub dx: f64,
    pub dy: f64,
    /// Absolute centroid height.
    pub z: f64,
    pub log_l: f64,
    pub log_w: f64,
    pub log_h: f64,
    pub cos_r: f64,
    pub sin_r: f64,
}

impl BoxTargets {
    pub fn components(&self) -> [f64; TARGET_COMPONENTS] {
        [
            self.dx, self.dy, self.z, self.log_l, self.log_w, self.log_h, self.cos_r, self.sin_r,
        ]
    }

    pub fn component(&self, k: usize) -> f64 {
        self.components()[k]
    }
}

/// Encodes a box against the hotspot cell center it was assigned to.
pub fn encode_box(b: &Box3D, hotspot_center: (f64, f64)) -> Result<BoxTargets> {
    b.validate()?;
    Ok(BoxTargets {
        dx: b.cx - hotspot_center.0,
        dy: b.cy - hotspot_center.1,
        z: b.cz,
        log_l: b.l.ln(),
        log_w: b.w.ln(),
        log_h: b.h.ln(),
        cos_r: b.yaw.cos(),
        sin_r: b.yaw.sin(),
    })
}

/// Uniform binning of a segment [a, b] into n bins with centers
/// C_i = a + (i + 0.5)(b - a)/n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftArgminSpec {
    pub a: f64,
    pub b: f64,
    pub n: usize,
}

impl SoftArgminSpec {
    pub fn new(a: f64, b: f64, n: usize) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() || a >= b {
            return Err(Error::invalid_config(format!(
                "soft-argmin segment must be a finite nonempty interval, got [{a}, {b}]"
            )));
        }
        if n < 2 {
            return Err(Error::invalid_config(format!(
                "soft-argmin needs at least 2 bins, got {n}"
            )));
        }
        Ok(SoftArgminSpec { a, b, n })
    }

    pub fn bin_width(&self) -> f64 {
        (self.b - self.a) / self.n as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.a + (i as f64 + 0.5) * self.bin_width()
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Soft argmin: expectation of bin centers under the softmax of the
/// logits. Always lands strictly inside (a, b).
pub fn softargmin(logits: &[f64], spec: &SoftArgminSpec) -> f64 {
    assert_eq!(logits.len(), spec.n, "logit count must match bin count");
    softmax(logits)
        .iter()
        .enumerate()
        .map(|(i, s)| s * spec.center(i))
        .sum()
}

/// Analytic gradient of the soft argmin: dt/dlogit_i = S_i (C_i - t).
pub fn softargmin_grad(logits: &[f64], spec: &SoftArgminSpec) -> Vec<f64> {
    assert_eq!(logits.len(), spec.n, "logit count must match bin count");
    let s = softmax(logits);
    let t: f64 = s.iter().enumerate().map(|(i, si)| si * spec.center(i)).sum();
    s.iter()
        .enumerate()
        .map(|(i, si)| si * (spec.center(i) - t))
        .collect()
}

/// How one of the 8 regression components is carried in the head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegChannel {
    Raw,
    Binned(SoftArgminSpec),
}

impl RegChannel {
    pub fn width(&self) -> usize {
        match self {
            RegChannel::Raw => 1,
            RegChannel::Binned(spec) => spec.n,
        }
    }
}

/// Channel layout of a detection head output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadLayout {
    pub num_classes: usize,
    /// One entry per regression component, in `COMPONENT_NAMES` order.
    pub channels: [RegChannel; TARGET_COMPONENTS],
    pub relation: RelationEncoding,
}

impl HeadLayout {
    pub fn new(
        num_classes: usize,
        channels: [RegChannel; TARGET_COMPONENTS],
        relation: RelationEncoding,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid_config("head needs at least one class"));
        }
        for ch in &channels {
            if let RegChannel::Binned(spec) = ch {
                SoftArgminSpec::new(spec.a, spec.b, spec.n)?;
            }
        }
        Ok(HeadLayout {
            num_classes,
            channels,
            relation,
        })
    }

    /// Default layout: dx/dy binned over [-4, 4] m with 16 bins, z binned
    /// over the grid's vertical range with 16 bins, sizes and heading raw.
    pub fn standard(num_classes: usize, grid: &GridConfig, relation: RelationEncoding) -> Result<Self> {
        let offset = SoftArgminSpec::new(-4.0, 4.0, 16)?;
        let z = SoftArgminSpec::new(grid.z_range.0, grid.z_range.1, 16)?;
        HeadLayout::new(
            num_classes,
            [
                RegChannel::Binned(offset),
                RegChannel::Binned(offset),
                RegChannel::Binned(z),
                RegChannel::Raw,
                RegChannel::Raw,
                RegChannel::Raw,
                RegChannel::Raw,
                RegChannel::Raw,
            ],
            relation,
        )
    }

    /// Total regression channel count.
    pub fn reg_width(&self) -> usize {
        self.channels.iter().map(|c| c.width()).sum()
    }

    /// First channel of regression component k.
    pub fn channel_offset(&self, k: usize) -> usize {
        self.channels[..k].iter().map(|c| c.width()).sum()
    }
}

/// Dense head output for one scene: per-cell class scores, regression
/// channels and spatial-relation channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadOutput {
    pub layout: HeadLayout,
    pub class_scores: Field,
    pub reg: Field,
    pub relation: Field,
}

impl HeadOutput {
    pub fn zeros(rows: usize, cols: usize, layout: HeadLayout) -> Self {
        let reg_width = layout.reg_width();
        let relation_width = layout.relation.arity();
        HeadOutput {
            class_scores: Field::zeros(rows, cols, layout.num_classes),
            reg: Field::zeros(rows, cols, reg_width),
            relation: Field::zeros(rows, cols, relation_width),
            layout,
        }
    }

    pub fn rows(&self) -> usize {
        self.class_scores.rows()
    }

    pub fn cols(&self) -> usize {
        self.class_scores.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (rows, cols) = (self.rows(), self.cols());
        let shapes = [
            ("class_scores", &self.class_scores, self.layout.num_classes),
            ("reg", &self.reg, self.layout.reg_width()),
            ("relation", &self.relation, self.layout.relation.arity()),
        ];
        for (name, field, width) in shapes {
            if field.rows() != rows || field.cols() != cols || field.width() != width {
                return Err(Error::ShapeMismatch(format!(
                    "{name} field is {}x{}x{}, expected {rows}x{cols}x{width}",
                    field.rows(),
                    field.cols(),
                    field.width()
                )));
            }
        }
        Ok(())
    }

    /// Regression channels of component k at one cell.
    pub fn reg_slice(&self, i: usize, j: usize, k: usize) -> &[f64] {
        let off = self.layout.channel_offset(k);
        &self.reg.cell(i, j)[off..off + self.layout.channels[k].width()]
    }

    /// Decoded value of regression component k at one cell: the raw value
    /// or the soft argmin of the bin logits.
    pub fn reg_value(&self, i: usize, j: usize, k: usize) -> f64 {
        match &self.layout.channels[k] {
            RegChannel::Raw => self.reg_slice(i, j, k)[0],
            RegChannel::Binned(spec) => softargmin(self.reg_slice(i, j, k), spec),
        }
    }
}

/// How target values are turned into bin logits when building head
/// tensors from ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadEncodeMode {
    /// Saturate the single bin containing the value. Decoding recovers the
    /// bin center, so the error is at most half a bin width.
    Saturate,
    /// Split mass between the two bracketing bins so the soft argmin
    /// reproduces the value (up to fp noise). Values outside the center
    /// range saturate the nearest edge bin.
    Exact,
}

/// Builds bin logits whose soft argmin approximates `value` under `mode`.
pub fn invert_softargmin(value: f64, spec: &SoftArgminSpec, mode: HeadEncodeMode) -> Vec<f64> {
    let mut logits = vec![0.0; spec.n];
    let saturate = |logits: &mut Vec<f64>, i: usize| logits[i] = SATURATED_LOGIT;
    match mode {
        HeadEncodeMode::Saturate => {
            let i = ((value - spec.a) / spec.bin_width()).floor();
            let i = (i.max(0.0) as usize).min(spec.n - 1);
            saturate(&mut logits, i);
        }
        HeadEncodeMode::Exact => {
            if value <= spec.center(0) {
                saturate(&mut logits, 0);
            } else if value >= spec.center(spec.n - 1) {
                saturate(&mut logits, spec.n - 1);
            } else {
                let i = (((value - spec.a) / spec.bin_width() - 0.5).floor() as usize)
                    .min(spec.n - 2);
                // Weights alpha / (1 - alpha) on bins i / i+1 reproduce the
                // value; tiny weights degenerate to a plain saturation.
                let alpha = (spec.center(i + 1) - value) / spec.bin_width();
                if alpha < 1e-12 {
                    saturate(&mut logits, i + 1);
                } else if alpha > 1.0 - 1e-12 {
                    saturate(&mut logits, i);
                } else {
                    logits[i] = alpha.ln() + SATURATED_LOGIT;
                    logits[i + 1] = (1.0 - alpha).ln() + SATURATED_LOGIT;
                }
            }
        }
    }
    logits
}

/// Decodes the box at one cell from a head output.
pub fn decode_box(cell: (usize, usize), out: &HeadOutput, config: &GridConfig) -> Result<Box3D> {
    let (i, j) = cell;
    let (x_h, y_h) = config.cell_center(i, j)?;
    let v: Vec<f64> = (0..TARGET_COMPONENTS)
        .map(|k| out.reg_value(i, j, k))
        .collect();
    let (l, w, h) = (v[3].exp(), v[4].exp(), v[5].exp());
    for (name, value) in [("l", l), ("w", w), ("h", h)] {
        if !value.is_finite() || value <= 0.0 {
            return Err(Error::InvalidDecode(format!(
                "size {name} decoded to {value} at cell ({i}, {j})"
            )));
        }
    }
    let yaw = normalize_yaw(v[7].atan2(v[6]));
    Box3D::new(x_h + v[0], y_h + v[1], v[2], l, w, h, yaw)
        .map_err(|e| Error::InvalidDecode(format!("cell ({i}, {j}): {e}")))
}

/// Builds the head tensors that exactly represent an assignment's targets:
/// `score` at each hotspot's class, target regression values (binned
/// channels via `mode`), and the relation targets as channel values.
pub fn encode_head(
    map: &AssignmentMap,
    layout: &HeadLayout,
    mode: HeadEncodeMode,
    score: f64,
) -> Result<HeadOutput> {
    if layout.num_classes != map.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "layout has {} classes, assignment {}",
            layout.num_classes,
            map.num_classes()
        )));
    }
    if layout.relation != map.encoding() {
        return Err(Error::ShapeMismatch(format!(
            "layout relation {:?} does not match assignment {:?}",
            layout.relation,
            map.encoding()
        )));
    }
    let mut out = HeadOutput::zeros(map.rows(), map.cols(), layout.clone());
    for (&(i, j), target) in map.hotspots() {
        out.class_scores.set(i, j, target.class_id as usize, score);
        for (k, channel) in layout.channels.iter().enumerate() {
            let value = target.box_targets.component(k);
            let off = layout.channel_offset(k);
            match channel {
                RegChannel::Raw => out.reg.set(i, j, off, value),
                RegChannel::Binned(spec) => {
                    let logits = invert_softargmin(value, spec, mode);
                    out.reg.cell_mut(i, j)[off..off + spec.n].copy_from_slice(&logits);
                }
            }
        }
        let relation_targets = target.relation.channel_targets(layout.relation);
        if !relation_targets.is_empty() {
            out.relation.cell_mut(i, j).copy_from_slice(&relation_targets);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{E, FRAC_PI_4};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn encode_box_components() {
        let b = Box3D::new(5.0, -2.0, 0.8, E, 1.0, E * E, 0.3).unwrap();
        let t = encode_box(&b, (5.0, -2.0)).unwrap();
        assert_eq!((t.dx, t.dy), (0.0, 0.0));
        assert_close(t.log_l, 1.0, 1e-12);
        assert_close(t.log_w, 0.0, 1e-12);
        assert_close(t.log_h, 2.0, 1e-12);
        assert_close(t.cos_r * t.cos_r + t.sin_r * t.sin_r, 1.0, 1e-12);
        let t = encode_box(&b, (4.3, -1.6)).unwrap();
        assert_close(t.dx, 0.7, 1e-12);
        assert_close(t.dy, -0.4, 1e-12);
        assert_close(t.z, 0.8, 1e-12);
    }

    #[test]
    fn softargmin_hand_cases() {
        let spec = SoftArgminSpec::new(-4.0, 4.0, 16).unwrap();
        assert_close(softargmin(&vec![0.7; 16], &spec), 0.0, 1e-12);
        let mut one_hot = vec![0.0; 16];
        one_hot[3] = SATURATED_LOGIT;
        assert_close(softargmin(&one_hot, &spec), spec.center(3), 1e-12);

        let two = SoftArgminSpec::new(0.0, 4.0, 2).unwrap();
        assert_close(softargmin(&[0.0, 3.0f64.ln()], &two), 2.5, 1e-12);
    }

    #[test]
    fn softargmin_is_shift_invariant_and_bounded() {
        let spec = SoftArgminSpec::new(-2.0, 6.0, 7).unwrap();
        let logits = [0.3, -1.2, 2.0, 0.0, 4.0, -0.5, 1.1];
        let shifted: Vec<f64> = logits.iter().map(|l| l + 123.0).collect();
        assert_close(softargmin(&logits, &spec), softargmin(&shifted, &spec), 1e-12);
        let t = softargmin(&logits, &spec);
        assert!(t > spec.a && t < spec.b);
    }

    #[test]
    fn softargmin_moves_up_when_high_bins_gain_mass() {
        let spec = SoftArgminSpec::new(0.0, 1.0, 8).unwrap();
        let mut logits = vec![0.0; 8];
        let before = softargmin(&logits, &spec);
        logits[7] += 1.0;
        assert!(softargmin(&logits, &spec) > before);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let spec = SoftArgminSpec::new(-4.0, 4.0, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let logits: Vec<f64> = (0..16).map(|_| rng.random_range(-3.0..3.0)).collect();
            let grad = softargmin_grad(&logits, &spec);
            assert_close(grad.iter().sum::<f64>(), 0.0, 1e-12);
            let h = 1e-6;
            for i in 0..16 {
                let mut hi = logits.clone();
                let mut lo = logits.clone();
                hi[i] += h;
                lo[i] -= h;
                let fd = (softargmin(&hi, &spec) - softargmin(&lo, &spec)) / (2.0 * h);
                let scale = grad[i].abs().max(1e-7);
                assert!(
                    (grad[i] - fd).abs() / scale < 1e-6 || (grad[i] - fd).abs() < 1e-9,
                    "component {i}: analytic {} vs fd {fd}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn grad_vanishes_when_saturated_and_mirrors_when_uniform() {
        let spec = SoftArgminSpec::new(-4.0, 4.0, 16).unwrap();
        let mut one_hot = vec![0.0; 16];
        one_hot[5] = SATURATED_LOGIT;
        for g in softargmin_grad(&one_hot, &spec) {
            assert!(g.abs() < 1e-12);
        }
        let grad = softargmin_grad(&vec![0.0; 16], &spec);
        for i in 0..8 {
            assert_close(grad[i], -grad[15 - i], 1e-12);
        }
        assert_close(grad.iter().sum::<f64>(), 0.0, 1e-12);
    }

    #[test]
    fn invert_exact_round_trips_to_fp_noise() {
        let spec = SoftArgminSpec::new(-4.0, 4.0, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let v = rng.random_range(spec.center(0)..spec.center(spec.n - 1));
            let logits = invert_softargmin(v, &spec, HeadEncodeMode::Exact);
            assert_close(softargmin(&logits, &spec), v, 1e-9);
        }
        // Out-of-range values pin to the edge centers.
        let lo = invert_softargmin(-9.0, &spec, HeadEncodeMode::Exact);
        assert_close(softargmin(&lo, &spec), spec.center(0), 1e-9);
        let hi = invert_softargmin(9.0, &spec, HeadEncodeMode::Exact);
        assert_close(softargmin(&hi, &spec), spec.center(15), 1e-9);
    }

    #[test]
    fn invert_saturate_hits_the_containing_bin() {
        let spec = SoftArgminSpec::new(-4.0, 4.0, 16).unwrap();
        for (v, bin) in [(-3.9, 0usize), (0.0, 8), (-0.01, 7), (3.99, 15), (5.0, 15), (-5.0, 0)] {
            let logits = invert_softargmin(v, &spec, HeadEncodeMode::Saturate);
            assert_close(softargmin(&logits, &spec), spec.center(bin), 1e-9);
        }
    }

    #[test]
    fn layout_offsets_and_widths() {
        let grid = GridConfig::kitti();
        let layout = HeadLayout::standard(3, &grid, RelationEncoding::Quadrant).unwrap();
        assert_eq!(layout.reg_width(), 16 + 16 + 16 + 5);
        assert_eq!(layout.channel_offset(0), 0);
        assert_eq!(layout.channel_offset(3), 48);
        assert_eq!(layout.channel_offset(7), 52);
        match layout.channels[2] {
            RegChannel::Binned(spec) => {
                assert_eq!((spec.a, spec.b, spec.n), (-3.0, 1.0, 16));
            }
            RegChannel::Raw => panic!("z must default to binned"),
        }
    }

    #[test]
    fn decode_yaw_ignores_scale() {
        let grid =
            GridConfig::new((0.0, 16.0), (-8.0, 8.0), (-1.0, 1.0), (0.5, 0.5, 2.0), 5, 2).unwrap();
        let layout = HeadLayout::standard(1, &grid, RelationEncoding::None).unwrap();
        let mut out = HeadOutput::zeros(16, 16, layout.clone());
        let cell = out.reg.cell_mut(3, 4);
        // Raw channels: log sizes 0 (unit box), cos = sin = 0.7.
        cell[layout.channel_offset(6)] = 0.7;
        cell[layout.channel_offset(7)] = 0.7;
        let b = decode_box((3, 4), &out, &grid).unwrap();
        assert_close(b.yaw, FRAC_PI_4, 1e-12);
        assert_close(b.l, 1.0, 1e-12);
    }

    #[test]
    fn decode_rejects_non_finite_sizes() {
        let grid =
            GridConfig::new((0.0, 16.0), (-8.0, 8.0), (-1.0, 1.0), (0.5, 0.5, 2.0), 5, 2).unwrap();
        let layout = HeadLayout::standard(1, &grid, RelationEncoding::None).unwrap();
        let mut out = HeadOutput::zeros(16, 16, layout.clone());
        out.reg.cell_mut(0, 0)[layout.channel_offset(3)] = 1e9;
        assert!(decode_box((0, 0), &out, &grid).is_err());
        let mut out = HeadOutput::zeros(16, 16, layout.clone());
        out.reg.cell_mut(0, 0)[layout.channel_offset(4)] = f64::NAN;
        assert!(decode_box((0, 0), &out, &grid).is_err());
        assert!(decode_box((99, 0), &out, &grid).is_err());
    }

    #[test]
    fn encode_saturate_decode_center_error_bounded() {
        let grid =
            GridConfig::new((0.0, 16.0), (-8.0, 8.0), (-4.0, 4.0), (0.5, 0.5, 2.0), 5, 2).unwrap();
        let layout = HeadLayout::standard(1, &grid, RelationEncoding::None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut out = HeadOutput::zeros(16, 16, layout.clone());
        for _ in 0..200 {
            let b = Box3D::new(
                rng.random_range(4.0..12.0),
                rng.random_range(-4.0..4.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(0.5..5.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.5..3.0),
                rng.random_range(-3.1..3.1),
            )
            .unwrap();
            // Assign to the cell containing the box center, as the
            // assignment stage would, so offsets stay within the bin range.
            let cell = ((b.cy + 8.0).floor() as usize, b.cx.floor() as usize);
            let center = grid.cell_center(cell.0, cell.1).unwrap();
            let t = encode_box(&b, center).unwrap();
            for (k, channel) in layout.channels.iter().enumerate() {
                let off = layout.channel_offset(k);
                match channel {
                    RegChannel::Raw => out.reg.cell_mut(cell.0, cell.1)[off] = t.component(k),
                    RegChannel::Binned(spec) => {
                        let logits =
                            invert_softargmin(t.component(k), spec, HeadEncodeMode::Saturate);
                        out.reg.cell_mut(cell.0, cell.1)[off..off + spec.n]
                            .copy_from_slice(&logits);
                    }
                }
            }
            let d = decode_box(cell, &out, &grid).unwrap();
            // Bins are 0.5 m wide for offsets and z here.
            assert!((d.cx - b.cx).abs() <= 0.25 + 1e-9);
            assert!((d.cy - b.cy).abs() <= 0.25 + 1e-9);
            assert!((d.cz - b.cz).abs() <= 0.25 + 1e-9);
            assert_close(d.l, b.l, 1e-9);
            assert_close(d.w, b.w, 1e-9);
            assert_close(d.h, b.h, 1e-9);
            assert_close(normalize_yaw(d.yaw - b.yaw), 0.0, 1e-9);
        }
    }
}
