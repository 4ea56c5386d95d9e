//! Property tests over the geometry, codec, assignment and inference
//! invariants that must hold for arbitrary inputs, not just the unit
//! fixtures.

use std::f64::consts::PI;

use proptest::prelude::*;

use hotspots_core::assignment::{
    build_assignment, max_hotspots, spatial_relation_label, CellState, RelationEncoding,
    SpatialRelationTarget,
};
use hotspots_core::codec::{
    invert_softargmin, softargmin, softargmin_grad, softmax, HeadEncodeMode, HeadLayout,
    HeadOutput, SoftArgminSpec,
};
use hotspots_core::evaluator::ap40;
use hotspots_core::geometry::{normalize_yaw, point_in_box_bev, rotated_iou_bev, Box3D};
use hotspots_core::inference::{
    detection_order, extract_candidates, sort_detections, Detection, InferenceConfig,
};
use hotspots_core::io::synth::{synth_scene, SynthSpec};
use hotspots_core::voxelizer::{bev_occupancy, voxelize, GridConfig};

fn box_strategy() -> impl Strategy<Value = Box3D> {
    (
        -20.0..20.0f64,
        -20.0..20.0f64,
        -2.0..2.0f64,
        0.3..8.0f64,
        0.3..8.0f64,
        0.3..4.0f64,
        -PI..PI,
    )
        .prop_map(|(cx, cy, cz, l, w, h, yaw)| Box3D::new(cx, cy, cz, l, w, h, yaw).unwrap())
}

fn rotate(p: (f64, f64), theta: f64) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (c * p.0 - s * p.1, s * p.0 + c * p.1)
}

/// The same box with center rotated about the origin and translated.
fn transform_box(b: &Box3D, theta: f64, t: (f64, f64)) -> Box3D {
    let (cx, cy) = rotate((b.cx, b.cy), theta);
    Box3D::new(cx + t.0, cy + t.1, b.cz, b.l, b.w, b.h, b.yaw + theta).unwrap()
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in box_strategy(), b in box_strategy()) {
        let ab = rotated_iou_bev(&a, &b);
        let ba = rotated_iou_bev(&b, &a);
        prop_assert!((0.0..=1.0).contains(&ab), "iou {ab}");
        prop_assert!((ab - ba).abs() < 1e-9, "asymmetry {ab} vs {ba}");
    }

    #[test]
    fn iou_with_self_is_one(a in box_strategy()) {
        prop_assert!((rotated_iou_bev(&a, &a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn iou_is_rigid_invariant(
        a in box_strategy(),
        b in box_strategy(),
        theta in -PI..PI,
        tx in -30.0..30.0f64,
        ty in -30.0..30.0f64,
    ) {
        let before = rotated_iou_bev(&a, &b);
        let after = rotated_iou_bev(
            &transform_box(&a, theta, (tx, ty)),
            &transform_box(&b, theta, (tx, ty)),
        );
        prop_assert!((before - after).abs() < 1e-7, "{before} vs {after}");
    }

    #[test]
    fn normalize_yaw_lands_in_half_open_interval(yaw in -100.0..100.0f64) {
        let n = normalize_yaw(yaw);
        prop_assert!(n > -PI && n <= PI, "normalized {n}");
        let shifted = normalize_yaw(yaw + 2.0 * PI);
        prop_assert!((n - shifted).abs() < 1e-9 || (n - shifted).abs() > 2.0 * PI - 1e-9);
    }

    #[test]
    fn constructed_interior_points_are_inside(
        b in box_strategy(),
        u in -0.49..0.49f64,
        v in -0.49..0.49f64,
    ) {
        let (s, c) = b.yaw.sin_cos();
        let (lx, ly) = (u * b.l, v * b.w);
        let p = [b.cx + c * lx - s * ly, b.cy + s * lx + c * ly];
        prop_assert!(point_in_box_bev(p, &b));
        // And a point pushed past the long side is outside.
        let (ox, oy) = (0.51 * b.l.signum() * b.l, ly);
        let q = [b.cx + c * ox - s * oy, b.cy + s * ox + c * oy];
        prop_assert!(!point_in_box_bev(q, &b));
    }

    #[test]
    fn relation_labels_are_rigid_invariant(
        b in box_strategy(),
        u in prop::sample::select(vec![-0.45, -0.3, -0.12, 0.08, 0.2, 0.4]),
        v in prop::sample::select(vec![-0.48, -0.25, -0.05, 0.11, 0.33, 0.47]),
        theta in -PI..PI,
        tx in -30.0..30.0f64,
        ty in -30.0..30.0f64,
    ) {
        // Point fixed in the box frame, away from all category boundaries.
        let (s, c) = b.yaw.sin_cos();
        let (lx, ly) = (u * b.l, v * b.w);
        let p = (b.cx + c * lx - s * ly, b.cy + s * lx + c * ly);
        let tb = transform_box(&b, theta, (tx, ty));
        let tp = {
            let r = rotate(p, theta);
            (r.0 + tx, r.1 + ty)
        };
        for kind in [
            RelationEncoding::Quadrant,
            RelationEncoding::LeftRight,
            RelationEncoding::FrontBack,
            RelationEncoding::EightDir,
        ] {
            prop_assert_eq!(
                spatial_relation_label(p, &b, kind),
                spatial_relation_label(tp, &tb, kind),
                "encoding {:?}",
                kind
            );
        }
        let (da, db) = match (
            spatial_relation_label(p, &b, RelationEncoding::Deviation),
            spatial_relation_label(tp, &tb, RelationEncoding::Deviation),
        ) {
            (
                SpatialRelationTarget::Deviation { along: a1, lateral: l1 },
                SpatialRelationTarget::Deviation { along: a2, lateral: l2 },
            ) => ((a1 - a2).abs(), (l1 - l2).abs()),
            other => panic!("unexpected labels {other:?}"),
        };
        prop_assert!(da < 1e-9 && db < 1e-9);
    }

    #[test]
    fn softargmin_stays_within_centers_and_grad_sums_to_zero(
        (spec, logits) in (2usize..32, -10.0..0.0f64, 1.0..12.0f64).prop_flat_map(|(n, a, span)| {
            let spec = SoftArgminSpec::new(a, a + span, n).unwrap();
            (Just(spec), prop::collection::vec(-30.0..30.0f64, n))
        })
    ) {
        let value = softargmin(&logits, &spec);
        let lo = spec.center(0);
        let hi = spec.center(spec.n - 1);
        prop_assert!(value >= lo - 1e-9 && value <= hi + 1e-9, "{value} outside [{lo}, {hi}]");
        let probs = softmax(&logits);
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Sum of gradients is sum_i S_i (C_i - t) = 0 by definition of t.
        let grad_sum: f64 = softargmin_grad(&logits, &spec).iter().sum();
        prop_assert!(grad_sum.abs() < 1e-9, "grad sum {grad_sum}");
    }

    #[test]
    fn exact_encode_round_trips(
        (spec, frac) in (4usize..24, -8.0..0.0f64, 2.0..10.0f64, 0.0..1.0f64)
            .prop_map(|(n, a, span, frac)| (SoftArgminSpec::new(a, a + span, n).unwrap(), frac))
    ) {
        // Any value between the outermost bin centers round-trips.
        let lo = spec.center(0);
        let hi = spec.center(spec.n - 1);
        let value = lo + frac * (hi - lo);
        let logits = invert_softargmin(value, &spec, HeadEncodeMode::Exact);
        prop_assert!((softargmin(&logits, &spec) - value).abs() < 1e-9);
    }

    #[test]
    fn saturate_encode_lands_within_half_bin(
        (spec, frac) in (4usize..24, -8.0..0.0f64, 2.0..10.0f64, 0.0..1.0f64)
            .prop_map(|(n, a, span, frac)| (SoftArgminSpec::new(a, a + span, n).unwrap(), frac))
    ) {
        let value = spec.a + frac * (spec.b - spec.a);
        let logits = invert_softargmin(value, &spec, HeadEncodeMode::Saturate);
        let err = (softargmin(&logits, &spec) - value).abs();
        prop_assert!(err <= spec.bin_width() / 2.0 + 1e-9, "err {err}");
    }

    #[test]
    fn detection_sort_is_permutation_invariant(
        mut dets in prop::collection::vec(
            (0u32..4, 0.0..1.0f64, 0usize..8, 0usize..8).prop_map(|(class, score, i, j)| {
                let b = Box3D::new(i as f64, j as f64, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
                let mut d = Detection::new(class, (score * 20.0).round() / 20.0, b);
                d.cell = (i, j);
                d
            }),
            0..24,
        )
    ) {
        let mut reversed: Vec<Detection> = dets.iter().rev().cloned().collect();
        sort_detections(&mut dets);
        sort_detections(&mut reversed);
        prop_assert_eq!(&dets, &reversed);
        for pair in dets.windows(2) {
            prop_assert!(detection_order(&pair[0], &pair[1]) != std::cmp::Ordering::Greater);
        }
    }

    #[test]
    fn ap40_is_a_probability(
        flags in prop::collection::vec(any::<bool>(), 0..30),
        num_gt in 1usize..20,
    ) {
        let scored: Vec<(f64, bool)> = flags
            .iter()
            .enumerate()
            .map(|(k, &tp)| (1.0 - k as f64 * 0.01, tp))
            .collect();
        // AP only makes sense when TPs cannot exceed ground truth.
        prop_assume!(flags.iter().filter(|&&t| t).count() <= num_gt);
        let ap = ap40(&scored, num_gt).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap), "ap {ap}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn assignment_partitions_and_respects_caps(seed in any::<u64>()) {
        let grid = GridConfig::new(
            (0.0, 25.6),
            (-12.8, 12.8),
            (-3.0, 1.0),
            (0.1, 0.1, 0.2),
            5,
            4,
        )
        .unwrap();
        let scene = synth_scene(&SynthSpec::default(), &grid, 0, seed).unwrap();
        let occ = bev_occupancy(&voxelize(&scene.points, &grid, seed), &grid);
        let map = build_assignment(&occ, &scene.gts, 64.0, RelationEncoding::Quadrant, 3, &grid)
            .unwrap();

        for (&(i, j), target) in map.hotspots() {
            // Hotspots sit on occupied cells, agree with the state grid and
            // reference a real object of the right class.
            prop_assert!(occ.occupied(i, j));
            let state = map.state(i, j);
            prop_assert_eq!(
                state,
                CellState::Hotspot {
                    class_id: target.class_id,
                    object_index: target.object_index
                }
            );
            let gt = &scene.gts[target.object_index as usize];
            prop_assert_eq!(gt.class_id, target.class_id);
            let center = grid.cell_center(i, j).unwrap();
            prop_assert!(point_in_box_bev([center.0, center.1], &gt.box3d));
        }
        for (obj, count) in map.hotspots_per_object() {
            prop_assert!(count <= max_hotspots(&scene.gts[obj as usize], 64.0));
        }
        // Ignored cells are covered by some box; negative cells by none.
        for i in 0..occ.rows() {
            for j in 0..occ.cols() {
                let center = grid.cell_center(i, j).unwrap();
                let covered = scene
                    .gts
                    .iter()
                    .any(|g| point_in_box_bev([center.0, center.1], &g.box3d));
                match map.state(i, j) {
                    CellState::Negative => prop_assert!(!covered),
                    _ => prop_assert!(covered),
                }
            }
        }
    }

    #[test]
    fn extract_candidates_respects_threshold_topk_and_order(seed in any::<u64>()) {
        let grid = GridConfig::new(
            (0.0, 3.2),
            (0.0, 3.2),
            (-1.0, 1.0),
            (0.1, 0.1, 0.5),
            5,
            4,
        )
        .unwrap();
        let (rows, cols) = grid.output_dims();
        let layout = HeadLayout::standard(3, &grid, RelationEncoding::None).unwrap();
        let mut out = HeadOutput::zeros(rows, cols, layout);
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for v in out.class_scores.data_mut() {
            *v = next();
        }
        for v in out.reg.data_mut() {
            *v = next() * 2.0 - 1.0;
        }
        let cfg = InferenceConfig::new(0.3, 10, 0.01).unwrap();
        let candidates = extract_candidates(&out, &cfg, &grid).unwrap();
        prop_assert!(candidates.len() <= cfg.pre_nms_top_k);
        for d in &candidates {
            prop_assert!(d.score >= cfg.score_threshold);
        }
        for pair in candidates.windows(2) {
            prop_assert!(detection_order(&pair[0], &pair[1]) != std::cmp::Ordering::Greater);
        }
    }
}
