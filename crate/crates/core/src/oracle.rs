//! Independent reference implementations that cross-check the fast
//! paths, and a suite runner behind the `oracle-check` command.
//!
//! Every oracle is deliberately written from scratch rather than
//! sharing code with the implementation it checks: Monte-Carlo
//! integration against the polygon-clipping IoU, a double-loop
//! brute-force assignment against the two-pass builder, central finite
//! differences against the analytic gradients, selection-based NMS and
//! matching against the sorted greedy versions, and linear-search
//! binning against the floor-division voxelizer.


use serde::{Deserialize, Serialize};

use crate::assignment::{
    build_assignment, CellState, GroundTruth, RelationEncoding,
};
use crate::codec::{
    encode_box, invert_softargmin, softargmin, softargmin_grad, BoxTargets, HeadEncodeMode,
    HeadLayout, HeadOutput, RegChannel, SoftArgminSpec, TARGET_COMPONENTS,
};
use crate::evaluator::{
    ap40, default_buckets, iou, match_detections, recall_by_points, IouKind,
};
use crate::geometry::{normalize_yaw, rotated_iou_bev, Box3D, Point3};
use crate::inference::{detection_order, rotated_nms, Detection};
use crate::io::synth::{synth_scene, PointDensity, SynthSpec};
use crate::loss::{
    binary_cross_entropy, classification_loss, focal_loss, regression_loss, relation_loss,
    smooth_l1, total_loss, FocalParams, LossWeights,
};
use crate::voxelizer::{bev_occupancy, voxelize, GridConfig, OccupancyGrid};
use crate::{derive_seed, mix64, Result};

/// Minimal fast RNG for the Monte-Carlo loops, where a cryptographic
/// generator would dominate the runtime. The usual additive-state
/// mix-finalizer construction.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        mix64(self.state)
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n).
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }
}

/// One oracle suite's verdict. `worst` is the suite's headline error
/// measure (mismatch count for exact suites, worst absolute or relative
/// error for numeric ones); the suite passes when `worst <= tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOutcome {
    pub name: String,
    pub cases: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl OracleOutcome {
    fn new(name: &str, cases: usize, worst: f64, tolerance: f64, detail: String) -> Self {
        OracleOutcome {
            name: name.to_string(),
            cases,
            worst,
            tolerance,
            passed: worst <= tolerance,
            detail,
        }
    }

    /// One-line human rendering, stable for diffing.
    pub fn line(&self) -> String {
        format!(
            "{}: {} [{} cases, worst {:.3e}, tolerance {:.3e}] {}",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.cases,
            self.worst,
            self.tolerance,
            self.detail
        )
    }
}

// ---------------------------------------------------------------------------
// Rotated IoU: Monte-Carlo area integration.

/// Axis-aligned containment test data for one oriented box.
struct BevTester {
    cx: f64,
    cy: f64,
    cos: f64,
    sin: f64,
    hl: f64,
    hw: f64,
}

impl BevTester {
    fn new(b: &Box3D) -> Self {
        BevTester {
            cx: b.cx,
            cy: b.cy,
            cos: b.yaw.cos(),
            sin: b.yaw.sin(),
            hl: b.l / 2.0,
            hw: b.w / 2.0,
        }
    }

    #[inline]
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let along = dx * self.cos + dy * self.sin;
        let lateral = -dx * self.sin + dy * self.cos;
        along.abs() <= self.hl && lateral.abs() <= self.hw
    }
}

fn bev_corners(b: &Box3D) -> [[f64; 2]; 4] {
    let (s, c) = b.yaw.sin_cos();
    let (hl, hw) = (b.l / 2.0, b.w / 2.0);
    let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
    local.map(|[x, y]| [b.cx + c * x - s * y, b.cy + s * x + c * y])
}

/// Estimates BEV IoU by uniform sampling over the joint bounding box of
/// the two footprints.
pub fn monte_carlo_iou_bev(a: &Box3D, b: &Box3D, samples: usize, seed: u64) -> f64 {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for corner in bev_corners(a).iter().chain(bev_corners(b).iter()) {
        for axis in 0..2 {
            lo[axis] = lo[axis].min(corner[axis]);
            hi[axis] = hi[axis].max(corner[axis]);
        }
    }
    let (ta, tb) = (BevTester::new(a), BevTester::new(b));
    let mut rng = SplitMix64::new(seed);
    let mut inter = 0u64;
    let mut union = 0u64;
    for _ in 0..samples {
        let x = rng.range(lo[0], hi[0]);
        let y = rng.range(lo[1], hi[1]);
        let in_a = ta.contains(x, y);
        let in_b = tb.contains(x, y);
        if in_a && in_b {
            inter += 1;
        }
        if in_a || in_b {
            union += 1;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn random_box_at(rng: &mut SplitMix64, cx: f64, cy: f64) -> Box3D {
    Box3D::new(
        cx,
        cy,
        rng.range(-1.0, 1.0),
        rng.range(0.5, 6.0),
        rng.range(0.5, 6.0),
        rng.range(0.5, 3.0),
        rng.range(-std::f64::consts::PI, std::f64::consts::PI),
    )
    .expect("positive sizes")
}

fn random_box_pair(rng: &mut SplitMix64) -> (Box3D, Box3D) {
    let (ax, ay) = (rng.range(-2.0, 2.0), rng.range(-2.0, 2.0));
    let a = random_box_at(rng, ax, ay);
    // Offset the second box by up to roughly the combined half diagonals
    // so the pair mixes heavy, partial and zero overlap.
    let reach = 0.75 * ((a.l + a.w) / 2.0 + 3.0);
    let (bx, by) = (
        a.cx + rng.range(-reach, reach),
        a.cy + rng.range(-reach, reach),
    );
    let b = random_box_at(rng, bx, by);
    (a, b)
}

/// Compares the clipping IoU against Monte-Carlo integration on random
/// box pairs.
pub fn iou_suite(pairs: usize, samples: usize, tolerance: f64, seed: u64) -> OracleOutcome {
    let mut rng = SplitMix64::new(mix64(seed ^ 0x101));
    let mut worst = 0.0f64;
    let mut worst_pair = 0usize;
    for k in 0..pairs {
        let (a, b) = random_box_pair(&mut rng);
        let fast = rotated_iou_bev(&a, &b);
        let mc = monte_carlo_iou_bev(&a, &b, samples, derive_seed(seed, &[0x707, k as u64]));
        let err = (fast - mc).abs();
        if err > worst {
            worst = err;
            worst_pair = k;
        }
    }
    OracleOutcome::new(
        "iou-monte-carlo",
        pairs,
        worst,
        tolerance,
        format!("{samples} samples/pair, worst at pair {worst_pair}"),
    )
}

/// Fixed geometry identities with known closed-form values.
pub fn iou_fixed_cases() -> OracleOutcome {
    let unit = |yaw: f64| Box3D::new(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, yaw).unwrap();
    let deg45 = rotated_iou_bev(&unit(0.0), &unit(std::f64::consts::FRAC_PI_4));
    let self_iou = rotated_iou_bev(&unit(0.3), &unit(0.3));
    let far = Box3D::new(50.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0).unwrap();
    let disjoint = rotated_iou_bev(&unit(0.0), &far);
    let worst = (deg45 - std::f64::consts::FRAC_1_SQRT_2)
        .abs()
        .max((self_iou - 1.0).abs())
        .max(disjoint.abs());
    OracleOutcome::new(
        "iou-fixed-cases",
        3,
        worst,
        1e-3,
        format!("45-degree square pair gives {deg45:.6}"),
    )
}

// ---------------------------------------------------------------------------
// Assignment: double loop + full sort.

fn inside_corners(corners: &[[f64; 2]; 4], x: f64, y: f64) -> bool {
    for k in 0..4 {
        let [x1, y1] = corners[k];
        let [x2, y2] = corners[(k + 1) % 4];
        let cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1);
        if cross < 0.0 {
            return false;
        }
    }
    true
}

fn brute_max_hotspots(b: &Box3D, c: f64) -> usize {
    if c.is_infinite() {
        return usize::MAX;
    }
    let m = (c / (b.l * b.w * b.h)).floor();
    if m >= usize::MAX as f64 {
        usize::MAX
    } else {
        (m as usize).max(1)
    }
}

/// Brute-force per-cell states: full double loop over cells and objects
/// for ownership, then a full sort per object for hotspot selection.
pub fn brute_assignment_states(
    occ: &OccupancyGrid,
    gts: &[GroundTruth],
    c: f64,
    grid: &GridConfig,
) -> Result<Vec<CellState>> {
    let (rows, cols) = (occ.rows(), occ.cols());
    let corners: Vec<[[f64; 2]; 4]> = gts.iter().map(|g| bev_corners(&g.box3d)).collect();
    let mut owner: Vec<Option<usize>> = vec![None; rows * cols];
    let mut states = vec![CellState::Negative; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let (x, y) = grid.cell_center(i, j)?;
            let mut best_d2 = f64::INFINITY;
            let mut best: Option<usize> = None;
            for (idx, gt) in gts.iter().enumerate() {
                if !inside_corners(&corners[idx], x, y) {
                    continue;
                }
                states[i * cols + j] = CellState::Ignored;
                let d2 = (x - gt.box3d.cx) * (x - gt.box3d.cx)
                    + (y - gt.box3d.cy) * (y - gt.box3d.cy);
                // Strict less + ascending index scan = lowest index on ties.
                if d2 < best_d2 {
                    best_d2 = d2;
                    best = Some(idx);
                }
            }
            owner[i * cols + j] = best;
        }
    }
    for (idx, gt) in gts.iter().enumerate() {
        let mut owned: Vec<(f64, usize, usize)> = Vec::new();
        for i in 0..rows {
            for j in 0..cols {
                if !occ.occupied(i, j) || owner[i * cols + j] != Some(idx) {
                    continue;
                }
                let (x, y) = grid.cell_center(i, j)?;
                let d2 = (x - gt.box3d.cx) * (x - gt.box3d.cx)
                    + (y - gt.box3d.cy) * (y - gt.box3d.cy);
                owned.push((d2, i, j));
            }
        }
        owned.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        for &(_, i, j) in owned.iter().take(brute_max_hotspots(&gt.box3d, c)) {
            states[i * cols + j] = CellState::Hotspot {
                class_id: gt.class_id,
                object_index: idx as u32,
            };
        }
    }
    Ok(states)
}

/// Grid used by the scene-scale oracle suites: 64x64 output cells over a
/// 25.6 m square.
pub fn oracle_grid() -> GridConfig {
    GridConfig::new(
        (0.0, 25.6),
        (-12.8, 12.8),
        (-3.0, 1.0),
        (0.1, 0.1, 0.2),
        5,
        4,
    )
    .expect("static grid config")
}

/// Synth spec for oracle scenes: the default class mix with a wide
/// point-count range, including single-point objects.
pub fn oracle_synth_spec() -> SynthSpec {
    SynthSpec {
        density: PointDensity::Range { min: 1, max: 400 },
        ..SynthSpec::default()
    }
}

/// Checks `build_assignment` against the brute-force reference on seeded
/// synthetic scenes, plus the per-object cap and the uncapped case.
pub fn assignment_suite(scenes: usize, c: f64, seed: u64) -> OracleOutcome {
    let grid = oracle_grid();
    let spec = oracle_synth_spec();
    let mut mismatches = 0usize;
    let mut detail = String::from("states, caps and uncapped runs all agree");
    for k in 0..scenes {
        let scene_seed = derive_seed(seed, &[0xA55, k as u64]);
        let scene = synth_scene(&spec, &grid, k as u64, scene_seed).expect("oracle scene");
        let occ = bev_occupancy(&voxelize(&scene.points, &grid, scene_seed), &grid);
        let map = build_assignment(&occ, &scene.gts, c, RelationEncoding::Quadrant, 3, &grid)
            .expect("assignment");
        let brute = brute_assignment_states(&occ, &scene.gts, c, &grid).expect("brute states");
        let mut scene_bad = false;
        for i in 0..occ.rows() {
            for j in 0..occ.cols() {
                if map.state(i, j) != brute[i * occ.cols() + j] {
                    scene_bad = true;
                }
            }
        }
        // Per-object cap.
        for (obj, count) in map.hotspots_per_object() {
            let cap = brute_max_hotspots(&scene.gts[obj as usize].box3d, c);
            if count > cap {
                scene_bad = true;
            }
        }
        // Uncapped: every occupied covered cell becomes a hotspot.
        if k % 10 == 0 {
            let unlimited = build_assignment(
                &occ,
                &scene.gts,
                f64::INFINITY,
                RelationEncoding::Quadrant,
                3,
                &grid,
            )
            .expect("uncapped assignment");
            for i in 0..occ.rows() {
                for j in 0..occ.cols() {
                    let is_hotspot = matches!(unlimited.state(i, j), CellState::Hotspot { .. });
                    let is_covered_spot = occ.occupied(i, j)
                        && !matches!(brute[i * occ.cols() + j], CellState::Negative);
                    if is_hotspot != is_covered_spot {
                        scene_bad = true;
                    }
                }
            }
        }
        if scene_bad {
            mismatches += 1;
            detail = format!("first mismatch at scene {k} (seed {scene_seed})");
        }
    }
    OracleOutcome::new("assignment-brute-force", scenes, mismatches as f64, 0.0, detail)
}

// ---------------------------------------------------------------------------
// Gradients: central finite differences.

/// Central difference of a scalar function.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Relative error with a unit floor, so tiny gradients compare absolutely.
pub fn gradient_rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

fn focal_fd_worst(cases: usize, rng: &mut SplitMix64) -> f64 {
    let gammas = [0.0, 0.5, 1.0, 2.0, 4.0];
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let fp = FocalParams::new(rng.range(0.05, 0.95), gammas[rng.below(gammas.len())])
            .expect("valid focal params");
        let p = rng.range(0.02, 0.98);
        let is_hotspot = rng.next_u64() % 2 == 0;
        let analytic = focal_loss(p, is_hotspot, &fp).1;
        let numeric = central_diff(|x| focal_loss(x, is_hotspot, &fp).0, p, 1e-6);
        worst = worst.max(gradient_rel_err(analytic, numeric));
    }
    worst
}

fn smooth_l1_fd_worst(cases: usize, rng: &mut SplitMix64) -> f64 {
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < cases {
        let x = rng.range(-3.0, 3.0);
        if (x.abs() - 1.0).abs() < 1e-3 {
            continue; // kink
        }
        let analytic = smooth_l1(x).1;
        let numeric = central_diff(|v| smooth_l1(v).0, x, 1e-6);
        worst = worst.max(gradient_rel_err(analytic, numeric));
        done += 1;
    }
    worst
}

fn bce_fd_worst(cases: usize, rng: &mut SplitMix64) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..cases {
        let p = rng.range(0.02, 0.98);
        let target = match k % 3 {
            0 => 0.0,
            1 => 1.0,
            _ => rng.next_f64(),
        };
        let analytic = binary_cross_entropy(p, target).1;
        let numeric = central_diff(|x| binary_cross_entropy(x, target).0, p, 1e-6);
        worst = worst.max(gradient_rel_err(analytic, numeric));
    }
    worst
}

fn softargmin_fd_worst(cases: usize, rng: &mut SplitMix64) -> f64 {
    let sizes = [4usize, 8, 16, 31];
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = sizes[rng.below(sizes.len())];
        let a = rng.range(-10.0, 0.0);
        let spec = SoftArgminSpec::new(a, a + rng.range(1.0, 12.0), n).expect("valid spec");
        let mut logits: Vec<f64> = (0..n).map(|_| rng.range(-6.0, 6.0)).collect();
        let analytic = softargmin_grad(&logits, &spec);
        for idx in 0..n {
            let x0 = logits[idx];
            let numeric = central_diff(
                |v| {
                    logits[idx] = v;
                    softargmin(&logits, &spec)
                },
                x0,
                1e-5,
            );
            logits[idx] = x0;
            worst = worst.max(gradient_rel_err(analytic[idx], numeric));
        }
    }
    worst
}

/// A small random scene with a populated assignment and a random head
/// output, for composite-loss checks.
fn random_loss_instance(
    seed: u64,
) -> (crate::assignment::AssignmentMap, HeadOutput, GridConfig) {
    let grid = GridConfig::new(
        (0.0, 12.8),
        (-6.4, 6.4),
        (-3.0, 1.0),
        (0.1, 0.1, 0.2),
        5,
        4,
    )
    .expect("static grid config");
    let spec = SynthSpec {
        num_objects: 4,
        clutter_points: 150,
        ..oracle_synth_spec()
    };
    let scene = synth_scene(&spec, &grid, 0, seed).expect("loss scene");
    let occ = bev_occupancy(&voxelize(&scene.points, &grid, seed), &grid);
    let map = build_assignment(&occ, &scene.gts, 64.0, RelationEncoding::Quadrant, 3, &grid)
        .expect("assignment");
    let layout =
        HeadLayout::standard(3, &grid, RelationEncoding::Quadrant).expect("standard layout");
    let mut out = HeadOutput::zeros(occ.rows(), occ.cols(), layout);
    let mut rng = SplitMix64::new(mix64(seed ^ 0xC0FFEE));
    for v in out.class_scores.data_mut() {
        *v = rng.range(0.05, 0.95);
    }
    for v in out.reg.data_mut() {
        *v = rng.range(-3.0, 3.0);
    }
    for v in out.relation.data_mut() {
        *v = rng.range(0.05, 0.95);
    }
    (map, out, grid)
}

/// Composite loss and the analytic gradient entry for one perturbed
/// coordinate of one field.
#[derive(Clone, Copy, PartialEq, Eq)]
enum LossField {
    Class,
    Reg,
    Relation,
}

fn composite_loss(out: &HeadOutput, map: &crate::assignment::AssignmentMap, fp: &FocalParams, w: &LossWeights) -> f64 {
    let (cls, _) = classification_loss(&out.class_scores, map, fp).expect("cls loss");
    let (loc, _) = regression_loss(out, map).expect("reg loss");
    let (rel, _) = relation_loss(&out.relation, map).expect("relation loss");
    total_loss(cls, loc, rel, w)
}

fn composite_fd_worst(configs: usize, probes_per_field: usize, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    for cfg_idx in 0..configs {
        let case_seed = derive_seed(seed, &[0x9AD, cfg_idx as u64]);
        let (map, out, _grid) = random_loss_instance(case_seed);
        let mut rng = SplitMix64::new(mix64(case_seed ^ 0xFD));
        let fp = FocalParams::new(rng.range(0.1, 0.9), [0.0, 1.0, 2.0][rng.below(3)])
            .expect("valid focal params");
        let w = LossWeights::new(rng.range(0.25, 2.0), rng.range(0.25, 2.0), rng.range(0.25, 2.0))
            .expect("valid weights");
        let (_, g_cls) = classification_loss(&out.class_scores, &map, &fp).expect("cls");
        let (_, g_reg) = regression_loss(&out, &map).expect("reg");
        let (_, g_rel) = relation_loss(&out.relation, &map).expect("rel");
        for field in [LossField::Class, LossField::Reg, LossField::Relation] {
            let (len, weight) = match field {
                LossField::Class => (out.class_scores.data().len(), w.delta),
                LossField::Reg => (out.reg.data().len(), w.beta),
                LossField::Relation => (out.relation.data().len(), w.zeta),
            };
            for _ in 0..probes_per_field {
                let idx = rng.below(len);
                let analytic = weight
                    * match field {
                        LossField::Class => g_cls.data()[idx],
                        LossField::Reg => g_reg.data()[idx],
                        LossField::Relation => g_rel.data()[idx],
                    };
                let x0 = match field {
                    LossField::Class => out.class_scores.data()[idx],
                    LossField::Reg => out.reg.data()[idx],
                    LossField::Relation => out.relation.data()[idx],
                };
                let mut probe = out.clone();
                let h = 1e-5 * x0.abs().max(1.0);
                let eval = |probe: &mut HeadOutput, v: f64| {
                    match field {
                        LossField::Class => probe.class_scores.data_mut()[idx] = v,
                        LossField::Reg => probe.reg.data_mut()[idx] = v,
                        LossField::Relation => probe.relation.data_mut()[idx] = v,
                    }
                    composite_loss(probe, &map, &fp, &w)
                };
                let numeric = (eval(&mut probe, x0 + h) - eval(&mut probe, x0 - h)) / (2.0 * h);
                let err = gradient_rel_err(analytic, numeric);
                // Smooth-L1 terms have kinks; skip probes that straddle one.
                if err > 1e-4 && near_smooth_l1_kink(&out, &map, field, idx) {
                    continue;
                }
                worst = worst.max(err);
            }
        }
    }
    worst
}

/// True when the loss term fed by this entry sits within FD range of a
/// smooth-L1 kink (|residual| near 1) or, for deviation relations, the
/// same on the relation channel.
fn near_smooth_l1_kink(
    out: &HeadOutput,
    map: &crate::assignment::AssignmentMap,
    field: LossField,
    idx: usize,
) -> bool {
    let tol = 1e-3;
    match field {
        LossField::Class => false,
        LossField::Reg => {
            let width = out.reg.width();
            let (cell, channel) = (idx / width, idx % width);
            let (i, j) = (cell / out.cols(), cell % out.cols());
            let Some(target) = map.target(i, j) else {
                return false;
            };
            // Which component does this channel belong to?
            let mut k = 0;
            let mut off = 0;
            while k < TARGET_COMPONENTS {
                let w = out.layout.channels[k].width();
                if channel < off + w {
                    break;
                }
                off += w;
                k += 1;
            }
            let residual = out.reg_value(i, j, k) - target.box_targets.component(k);
            (residual.abs() - 1.0).abs() < tol
        }
        LossField::Relation => {
            if map.encoding().is_categorical() {
                return false;
            }
            let width = out.relation.width();
            let (cell, channel) = (idx / width, idx % width);
            let (i, j) = (cell / out.cols(), cell % out.cols());
            let Some(target) = map.target(i, j) else {
                return false;
            };
            let t = target.relation.channel_targets(map.encoding())[channel];
            let p = out.relation.data()[idx];
            ((p - t).abs() - 1.0).abs() < tol
        }
    }
}

/// Finite-difference checks for every loss family and the weighted
/// composite.
pub fn gradient_suite(cases_per_family: usize, seed: u64) -> OracleOutcome {
    let mut rng = SplitMix64::new(mix64(seed ^ 0x6AD));
    let focal = focal_fd_worst(cases_per_family, &mut rng);
    let sl1 = smooth_l1_fd_worst(cases_per_family, &mut rng);
    let bce = bce_fd_worst(cases_per_family, &mut rng);
    let sam = softargmin_fd_worst(cases_per_family.max(25), &mut rng);
    let composite_configs = cases_per_family.max(100);
    let composite = composite_fd_worst(composite_configs, 5, seed);
    let worst = focal.max(sl1).max(bce).max(sam).max(composite);
    OracleOutcome::new(
        "gradient-finite-difference",
        cases_per_family * 4 + composite_configs,
        worst,
        1e-4,
        format!(
            "focal {focal:.2e}, smooth-l1 {sl1:.2e}, bce {bce:.2e}, softargmin {sam:.2e}, composite {composite:.2e}"
        ),
    )
}

// ---------------------------------------------------------------------------
// Codec round trip.

/// Writes one cell's regression channels from targets, as the head
/// encoder does, without needing a full assignment.
pub fn write_reg_cell(out: &mut HeadOutput, cell: (usize, usize), t: &BoxTargets, mode: HeadEncodeMode) {
    for k in 0..TARGET_COMPONENTS {
        let off = out.layout.channel_offset(k);
        let value = t.component(k);
        match out.layout.channels[k].clone() {
            RegChannel::Raw => out.reg.cell_mut(cell.0, cell.1)[off] = value,
            RegChannel::Binned(spec) => {
                let logits = invert_softargmin(value, &spec, mode);
                out.reg.cell_mut(cell.0, cell.1)[off..off + spec.n].copy_from_slice(&logits);
            }
        }
    }
}

/// Random boxes, encoded into a saturated binned head cell and decoded
/// back: centers must land within half a bin, sizes and yaw must be
/// exact to 1e-9. The exact encode mode must reproduce centers to 1e-9.
pub fn codec_suite(cases: usize, seed: u64) -> OracleOutcome {
    let grid = oracle_grid();
    let (rows, cols) = grid.output_dims();
    let layout = HeadLayout::standard(1, &grid, RelationEncoding::None).expect("layout");
    let half = |k: usize| match &layout.channels[k] {
        RegChannel::Binned(spec) => spec.bin_width() / 2.0,
        RegChannel::Raw => 0.0,
    };
    let (half_dx, half_dy, half_z) = (half(0), half(1), half(2));
    let mut out = HeadOutput::zeros(rows, cols, layout);
    let mut rng = SplitMix64::new(mix64(seed ^ 0xC0DEC));
    let mut violations = 0usize;
    let mut worst_center = 0.0f64;
    let mut worst_exact = 0.0f64;
    let mut worst_rest = 0.0f64;
    for _ in 0..cases {
        let h = rng.range(0.5, 3.0);
        let b = Box3D::new(
            rng.range(0.5, 25.1),
            rng.range(-12.3, 12.3),
            rng.range(-3.0 + h / 2.0, 1.0 - h / 2.0),
            rng.range(0.3, 6.0),
            rng.range(0.3, 6.0),
            h,
            rng.range(-std::f64::consts::PI, std::f64::consts::PI),
        )
        .expect("valid box");
        // Hotspot cell: the cell containing the center, shifted by up to
        // several cells while keeping the offset inside the bin range.
        let base_i = (((b.cy - grid.y_range.0) / (0.1 * 4.0)) as usize).min(rows - 1);
        let base_j = (((b.cx - grid.x_range.0) / (0.1 * 4.0)) as usize).min(cols - 1);
        let i = (base_i + rng.below(15)).saturating_sub(7).min(rows - 1);
        let j = (base_j + rng.below(15)).saturating_sub(7).min(cols - 1);
        // Keep offsets strictly inside the outermost bin centers (3.75 m
        // for [-4, 4] with 16 bins) so the exact mode can represent them.
        let center = grid.cell_center(i, j).expect("cell in grid");
        let (i, j) = if (b.cx - center.0).abs() > 3.7 || (b.cy - center.1).abs() > 3.7 {
            (base_i, base_j)
        } else {
            (i, j)
        };
        let targets = encode_box(&b, grid.cell_center(i, j).expect("cell in grid"))
            .expect("encodable box");

        for (mode, center_budget) in [
            (HeadEncodeMode::Saturate, [half_dx, half_dy, half_z]),
            (HeadEncodeMode::Exact, [1e-9, 1e-9, 1e-9]),
        ] {
            write_reg_cell(&mut out, (i, j), &targets, mode);
            let decoded = crate::codec::decode_box((i, j), &out, &grid).expect("decodable cell");
            let errs = [
                (decoded.cx - b.cx).abs(),
                (decoded.cy - b.cy).abs(),
                (decoded.cz - b.cz).abs(),
            ];
            for (err, budget) in errs.iter().zip(center_budget) {
                if *err > budget + 1e-12 {
                    violations += 1;
                }
                match mode {
                    HeadEncodeMode::Saturate => worst_center = worst_center.max(*err),
                    HeadEncodeMode::Exact => worst_exact = worst_exact.max(*err),
                }
            }
            let rest = (decoded.l - b.l)
                .abs()
                .max((decoded.w - b.w).abs())
                .max((decoded.h - b.h).abs())
                .max((normalize_yaw(decoded.yaw - b.yaw)).abs());
            worst_rest = worst_rest.max(rest);
            if rest > 1e-9 {
                violations += 1;
            }
        }
    }
    OracleOutcome::new(
        "codec-round-trip",
        cases,
        violations as f64,
        0.0,
        format!(
            "worst center error {worst_center:.3e} (budget {half_dx:.3}), exact mode {worst_exact:.1e}, sizes/yaw {worst_rest:.1e}"
        ),
    )
}

// ---------------------------------------------------------------------------
// NMS and matching references.

/// Selection-based greedy NMS: repeatedly take the globally best
/// remaining detection and drop same-class overlaps above the threshold.
pub fn reference_nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut remaining: Vec<Detection> = dets.to_vec();
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let best_idx = remaining
            .iter()
            .enumerate()
            .min_by(|a, b| detection_order(a.1, b.1))
            .map(|(i, _)| i)
            .expect("non-empty");
        let best = remaining.remove(best_idx);
        remaining.retain(|d| {
            d.class_id != best.class_id || rotated_iou_bev(&d.box3d, &best.box3d) <= iou_threshold
        });
        kept.push(best);
    }
    kept
}

fn random_detections(rng: &mut SplitMix64, max_n: usize, area: f64) -> Vec<Detection> {
    let n = rng.below(max_n + 1);
    (0..n)
        .map(|_| {
            let b = Box3D::new(
                rng.range(0.0, area),
                rng.range(0.0, area),
                rng.range(-1.0, 1.0),
                rng.range(1.0, 5.0),
                rng.range(1.0, 5.0),
                rng.range(0.5, 2.5),
                rng.range(-std::f64::consts::PI, std::f64::consts::PI),
            )
            .expect("valid box");
            let mut d = Detection::new(rng.below(3) as u32, rng.next_f64(), b);
            // Coarse scores half the time, to exercise tie-breaks.
            if rng.next_u64() % 2 == 0 {
                d.score = (d.score * 10.0).round() / 10.0;
            }
            d.cell = (rng.below(64), rng.below(64));
            d
        })
        .collect()
}

/// Greedy NMS against the selection-based reference on random clustered
/// detection sets.
pub fn nms_suite(cases: usize, seed: u64) -> OracleOutcome {
    let mut rng = SplitMix64::new(mix64(seed ^ 0x9135));
    let thresholds = [0.01, 0.1, 0.3, 0.5];
    let mut mismatches = 0usize;
    for k in 0..cases {
        let dets = random_detections(&mut rng, 40, 20.0);
        let thr = thresholds[k % thresholds.len()];
        if rotated_nms(&dets, thr) != reference_nms(&dets, thr) {
            mismatches += 1;
        }
    }
    OracleOutcome::new(
        "nms-reference",
        cases,
        mismatches as f64,
        0.0,
        "greedy NMS equals selection-based reference".to_string(),
    )
}

/// Independent matcher: selection-based detection ordering and explicit
/// candidate ranking per detection.
pub fn oracle_match_tp(
    dets: &[Detection],
    gts: &[Box3D],
    iou_threshold: f64,
    kind: IouKind,
) -> (Vec<usize>, Vec<bool>, Vec<bool>) {
    let mut unprocessed: Vec<usize> = (0..dets.len()).collect();
    let mut gt_taken = vec![false; gts.len()];
    let mut order = Vec::new();
    let mut tp = Vec::new();
    while !unprocessed.is_empty() {
        let pos = unprocessed
            .iter()
            .enumerate()
            .min_by(|a, b| detection_order(&dets[*a.1], &dets[*b.1]))
            .map(|(p, _)| p)
            .expect("non-empty");
        let det_idx = unprocessed.remove(pos);
        let mut candidates: Vec<(f64, usize)> = gts
            .iter()
            .enumerate()
            .filter(|(g, _)| !gt_taken[*g])
            .map(|(g, gt)| (iou(&dets[det_idx].box3d, gt, kind), g))
            .filter(|(overlap, _)| *overlap >= iou_threshold)
            .collect();
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        order.push(det_idx);
        match candidates.first() {
            Some(&(_, g)) => {
                gt_taken[g] = true;
                tp.push(true);
            }
            None => tp.push(false),
        }
    }
    (order, tp, gt_taken)
}

/// Independent AP at 40 recall points: tail-running-max interpolation
/// over an explicitly built PR curve.
pub fn oracle_ap40(scored: &[(f64, bool)], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut ranked = scored.to_vec();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut precisions = Vec::with_capacity(ranked.len());
    let mut recalls = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (rank, &(_, is_tp)) in ranked.iter().enumerate() {
        tp += usize::from(is_tp);
        precisions.push(tp as f64 / (rank + 1) as f64);
        recalls.push(tp as f64 / num_gt as f64);
    }
    // Running max from the tail: best precision at recall >= recalls[i].
    let mut best_at = precisions.clone();
    for i in (0..best_at.len().saturating_sub(1)).rev() {
        best_at[i] = best_at[i].max(best_at[i + 1]);
    }
    let mut total = 0.0;
    for k in 1..=40 {
        let r = k as f64 / 40.0 - 1e-12;
        let first = recalls.partition_point(|&rec| rec < r);
        if first < best_at.len() {
            total += best_at[first];
        }
    }
    Some(total / 40.0)
}

/// Matching and AP against the independent implementations on random
/// small instances.
pub fn matching_suite(cases: usize, seed: u64) -> OracleOutcome {
    let mut rng = SplitMix64::new(mix64(seed ^ 0x3A7C));
    let mut mismatches = 0usize;
    let mut worst_ap = 0.0f64;
    for k in 0..cases {
        let dets = random_detections(&mut rng, 10, 12.0);
        let gts: Vec<Box3D> = random_detections(&mut rng, 5, 12.0)
            .into_iter()
            .map(|d| d.box3d)
            .collect();
        let thr = [0.1, 0.25, 0.5][k % 3];
        let kind = if k % 2 == 0 {
            IouKind::Bev
        } else {
            IouKind::Volumetric
        };
        let fast = match_detections(&dets, &gts, thr, kind);
        let (order, tp, gt_taken) = oracle_match_tp(&dets, &gts, thr, kind);
        if fast.order != order || fast.tp != tp || fast.gt_matched != gt_taken {
            mismatches += 1;
        }
        let scored: Vec<(f64, bool)> = fast
            .order
            .iter()
            .zip(&fast.tp)
            .map(|(&idx, &t)| (dets[idx].score, t))
            .collect();
        match (ap40(&scored, gts.len()), oracle_ap40(&scored, gts.len())) {
            (Some(a), Some(b)) => worst_ap = worst_ap.max((a - b).abs()),
            (None, None) => {}
            _ => mismatches += 1,
        }
    }
    OracleOutcome::new(
        "matching-and-ap",
        cases,
        mismatches as f64 + if worst_ap > 1e-12 { 1.0 } else { 0.0 },
        0.0,
        format!("worst AP disagreement {worst_ap:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// Occupancy and recall counting references.

/// Per-axis bin lookup by linear search over bin edges; `None` when out
/// of range. The global max edge belongs to the last bin.
fn linear_axis_bin(v: f64, lo: f64, size: f64, n: usize) -> Option<usize> {
    if !v.is_finite() || v < lo {
        return None;
    }
    let mut idx = 0usize;
    while idx < n && v >= lo + (idx as f64 + 1.0) * size {
        idx += 1;
    }
    if idx < n {
        Some(idx)
    } else if v <= lo + n as f64 * size {
        Some(n - 1)
    } else {
        None
    }
}

/// Occupancy counts recomputed with linear-search binning and explicit
/// per-voxel caps; row-major over the output grid.
pub fn brute_occupancy_counts(points: &[Point3], grid: &GridConfig) -> Vec<usize> {
    let (nx, ny, nz) = grid.input_dims();
    let (rows, cols) = grid.output_dims();
    let mut per_voxel: std::collections::BTreeMap<(usize, usize, usize), usize> =
        std::collections::BTreeMap::new();
    for p in points {
        let Some(ix) = linear_axis_bin(p.x, grid.x_range.0, grid.voxel_size.0, nx) else {
            continue;
        };
        let Some(iy) = linear_axis_bin(p.y, grid.y_range.0, grid.voxel_size.1, ny) else {
            continue;
        };
        let Some(iz) = linear_axis_bin(p.z, grid.z_range.0, grid.voxel_size.2, nz) else {
            continue;
        };
        *per_voxel.entry((ix, iy, iz)).or_insert(0) += 1;
    }
    let mut counts = vec![0usize; rows * cols];
    for ((ix, iy, _iz), total) in per_voxel {
        let (i, j) = (iy / grid.downsample, ix / grid.downsample);
        counts[i * cols + j] += total.min(grid.max_points_per_voxel);
    }
    counts
}

/// Voxelizer + BEV occupancy against linear-search binning on synthetic
/// scenes.
pub fn occupancy_suite(scenes: usize, seed: u64) -> OracleOutcome {
    let grid = oracle_grid();
    let spec = oracle_synth_spec();
    let mut mismatches = 0usize;
    for k in 0..scenes {
        let scene_seed = derive_seed(seed, &[0x0CC, k as u64]);
        let scene = synth_scene(&spec, &grid, k as u64, scene_seed).expect("oracle scene");
        let occ = bev_occupancy(&voxelize(&scene.points, &grid, scene_seed), &grid);
        let brute = brute_occupancy_counts(&scene.points, &grid);
        let mut bad = false;
        for i in 0..occ.rows() {
            for j in 0..occ.cols() {
                if occ.count(i, j) != brute[i * occ.cols() + j] {
                    bad = true;
                }
            }
        }
        if bad {
            mismatches += 1;
        }
    }
    OracleOutcome::new(
        "occupancy-linear-search",
        scenes,
        mismatches as f64,
        0.0,
        "voxel counts equal linear-search binning".to_string(),
    )
}

/// Bucketed recall against direct counting on random point-count and
/// matched-flag vectors.
pub fn recall_suite(cases: usize, seed: u64) -> OracleOutcome {
    let mut rng = SplitMix64::new(mix64(seed ^ 0x57AB));
    let buckets = default_buckets();
    let mut mismatches = 0usize;
    for _ in 0..cases {
        let n = rng.below(30);
        let gts: Vec<GroundTruth> = (0..n)
            .map(|_| {
                // Log-uniform point counts spanning the sparsity regimes.
                let num_points = (10f64.powf(rng.range(0.0, 3.0))) as u32;
                GroundTruth::new(
                    rng.below(3) as u32,
                    Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).expect("unit box"),
                    num_points.max(1),
                )
            })
            .collect();
        let matched: Vec<bool> = (0..n).map(|_| rng.next_u64() % 2 == 0).collect();
        let reported = recall_by_points(&gts, &matched, &buckets);
        for (bucket, report) in buckets.iter().zip(&reported) {
            let mut total = 0usize;
            let mut hit = 0usize;
            for (gt, &m) in gts.iter().zip(&matched) {
                let in_bucket = gt.num_points >= bucket.min
                    && bucket.max.map_or(true, |hi| gt.num_points <= hi);
                if in_bucket {
                    total += 1;
                    hit += usize::from(m);
                }
            }
            let expect = (total > 0).then(|| hit as f64 / total as f64);
            if report.num_gt != total || report.matched != hit || report.recall != expect {
                mismatches += 1;
            }
        }
    }
    OracleOutcome::new(
        "recall-counting",
        cases,
        mismatches as f64,
        0.0,
        "bucketed recall equals direct counts".to_string(),
    )
}

// ---------------------------------------------------------------------------
// Suite runner.

/// How much work the oracle suites do: `Quick` keeps `oracle-check`
/// interactive; `Full` runs the acceptance-scale workloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleScale {
    Quick,
    Full,
}

/// Runs every oracle suite at the given scale.
pub fn run_all(scale: OracleScale, seed: u64) -> Vec<OracleOutcome> {
    let (iou_pairs, iou_samples, iou_tol) = match scale {
        OracleScale::Quick => (20, 200_000, 1.2e-2),
        OracleScale::Full => (200, 10_000_000, 2e-3),
    };
    let (scenes, grads, codec_cases, nms_cases, match_cases, occ_scenes, recall_cases) =
        match scale {
            OracleScale::Quick => (30, 25, 1_000, 200, 200, 30, 100),
            OracleScale::Full => (1_000, 100, 10_000, 1_000, 500, 200, 500),
        };
    vec![
        iou_fixed_cases(),
        iou_suite(iou_pairs, iou_samples, iou_tol, seed),
        assignment_suite(scenes, 64.0, seed),
        gradient_suite(grads, seed),
        codec_suite(codec_cases, seed),
        nms_suite(nms_cases, seed),
        matching_suite(match_cases, seed),
        occupancy_suite(occ_scenes, seed),
        recall_suite(recall_cases, seed),
    ]
}
