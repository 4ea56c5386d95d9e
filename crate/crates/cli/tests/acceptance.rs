//! Acceptance gate for the whole workspace. Each test covers one numbered
//! criterion, prints exactly one `acceptance N (...): PASS` line on
//! success, and pins its tolerances in the assertions:
//!
//! 1. Analytic gradients (focal, smooth L1, BCE, soft argmin, weighted
//!    composite) match central finite differences on >= 100 random
//!    configurations per family, relative error < 1e-4, in under 10 s.
//! 2. Hotspot assignment equals a brute-force double-loop-plus-sort
//!    reference cell for cell on 1,000 seeded scenes, respects the
//!    per-object cap max(1, floor(C / volume)), and with an unbounded
//!    budget selects every covered occupied cell.
//! 3. Rotated BEV IoU agrees with a 10^7-sample Monte-Carlo oracle within
//!    2e-3 on 200 random pairs; the 45-degree square pair gives
//!    0.7071 +/- 1e-3.
//! 4. Box codec round-trip over 10^4 random boxes: saturated binned
//!    decoding recovers centers within half a bin width per axis
//!    ([-4, 4] with 16 bins); sizes and yaw exact to 1e-9.
//! 5. End-to-end identity: synthetic scenes, ground truth encoded into
//!    head outputs, decoded at threshold 0.3 / top-100 / rotated NMS IoU
//!    0.01, then evaluated, give AP40 = 1.000 for every class; 100
//!    scenes complete in under 30 s.
//! 6. Ignored cells are masked bit-exactly: overwriting every ignored
//!    cell with NaN and huge values changes no loss and no gradient bit.
//! 7. AP40 equals the hand-computed 5/6 on the three-detection example
//!    and an exhaustive-matching oracle on 500 random small instances.
//! 8. Point-count recall buckets {1-10, 11-50, 51-200, 201+} are
//!    produced on synthetic data under injected detector dropout and
//!    match direct counting, and the counting oracle suite passes.
//! 9. Every CLI subcommand writes byte-identical outputs across two runs
//!    with the same seed and across --jobs 1 and --jobs 8.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use hotspots_core::assignment::{build_assignment, CellState, RelationEncoding};
use hotspots_core::codec::{encode_head, HeadEncodeMode, HeadLayout, HeadOutput};
use hotspots_core::derive_seed;
use hotspots_core::evaluator::{
    ap40, default_buckets, evaluate_scenes, EvalConfig,
};
use hotspots_core::inference::{extract_candidates, rotated_nms, Detection, InferenceConfig};
use hotspots_core::io::synth::{synth_scene, PointDensity, SceneBundle, SynthSpec};
use hotspots_core::loss::{
    classification_loss, regression_loss, relation_loss, FocalParams,
};
use hotspots_core::oracle::{
    assignment_suite, codec_suite, gradient_suite, iou_fixed_cases, iou_suite, matching_suite,
    oracle_grid, oracle_synth_spec, recall_suite, OracleOutcome,
};
use hotspots_core::voxelizer::{bev_occupancy, voxelize, GridConfig};
use hotspots_core::Field;

/// Asserts one oracle suite passed and returns it for reporting.
fn expect_pass(outcome: OracleOutcome) -> OracleOutcome {
    assert!(outcome.passed, "{}", outcome.line());
    outcome
}

/// Tiny splitmix-style generator for test-local randomness.
struct TestRng(u64);

impl TestRng {
    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

#[test]
fn criterion_1_gradients_match_finite_differences() {
    let started = Instant::now();
    let outcome = expect_pass(gradient_suite(100, 2031));
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "gradient suite took {elapsed:.1}s, budget 10s");
    println!(
        "acceptance 1 (gradient finite differences): PASS worst rel err {:.3e} in {elapsed:.2}s",
        outcome.worst
    );
}

#[test]
fn criterion_2_assignment_matches_brute_force() {
    let outcome = expect_pass(assignment_suite(1000, 64.0, 2032));
    println!(
        "acceptance 2 (assignment vs brute force, caps, unbounded budget): PASS {} scenes",
        outcome.cases
    );
}

#[test]
fn criterion_3_rotated_iou_matches_monte_carlo() {
    let fixed = expect_pass(iou_fixed_cases());
    let mc = expect_pass(iou_suite(200, 10_000_000, 2e-3, 2033));
    println!(
        "acceptance 3 (rotated IoU vs Monte-Carlo): PASS fixed worst {:.3e}, {} pairs worst {:.3e}",
        fixed.worst, mc.cases, mc.worst
    );
}

#[test]
fn criterion_4_codec_round_trip() {
    let outcome = expect_pass(codec_suite(10_000, 2034));
    println!(
        "acceptance 4 (codec round-trip, half-bin centers, exact sizes/yaw): PASS {} boxes",
        outcome.cases
    );
}

/// Builds one scene's detections by running the full in-memory pipeline:
/// voxelize, assign, encode ground truth, extract candidates, NMS.
fn detect_encoded_gt(
    scene: &SceneBundle,
    grid: &GridConfig,
    layout: &HeadLayout,
    inference: &InferenceConfig,
    voxel_seed: u64,
) -> Vec<Detection> {
    let occ = bev_occupancy(&voxelize(&scene.points, grid, voxel_seed), grid);
    let map = build_assignment(&occ, &scene.gts, 64.0, layout.relation, 3, grid)
        .expect("assignment");
    let head = encode_head(&map, layout, HeadEncodeMode::Exact, 1.0).expect("encode");
    let candidates = extract_candidates(&head, inference, grid).expect("extract");
    rotated_nms(&candidates, inference.nms_iou_threshold)
}

#[test]
fn criterion_5_end_to_end_identity() {
    let started = Instant::now();
    let grid = oracle_grid();
    let spec = SynthSpec {
        num_objects: 6,
        density: PointDensity::Exact { count: 300 },
        clutter_points: 200,
        ..SynthSpec::default()
    };
    let layout = HeadLayout::standard(3, &grid, RelationEncoding::Quadrant).expect("layout");
    let inference = InferenceConfig::new(0.3, 100, 0.01).expect("inference config");

    let mut scenes = Vec::new();
    for id in 0..100u64 {
        let scene = synth_scene(&spec, &grid, id, derive_seed(2035, &[1, id]))
            .expect("synth scene");
        let dets = detect_encoded_gt(&scene, &grid, &layout, &inference, derive_seed(2035, &[2, id]));
        scenes.push((dets, scene.gts.clone()));
    }
    let report = evaluate_scenes(&scenes, 3, &EvalConfig::kitti()).expect("evaluate");
    for m in &report.per_class {
        assert!(m.num_gt > 0, "class {} has no ground truth", m.class_id);
        let ap = m.ap40.unwrap_or(0.0);
        assert!(
            (ap - 1.0).abs() < 1e-12,
            "class {} AP40 = {ap}, expected 1.000 (gt {}, det {}, tp {})",
            m.class_id,
            m.num_gt,
            m.num_detections,
            m.true_positives
        );
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "end-to-end identity took {elapsed:.1}s, budget 30s");
    println!(
        "acceptance 5 (end-to-end identity AP40 = 1.000): PASS 100 scenes in {elapsed:.2}s"
    );
}

#[test]
fn criterion_6_ignored_cells_are_masked_bit_exactly() {
    let grid = oracle_grid();
    // Cars only: volume ~13.7 caps hotspots at 4 per object while dense
    // sampling occupies the whole footprint, guaranteeing ignored cells.
    let mut spec = SynthSpec::default();
    spec.classes.truncate(1);
    spec.num_objects = 3;
    spec.density = PointDensity::Exact { count: 400 };
    let scene = synth_scene(&spec, &grid, 0, 2036).expect("synth scene");
    let occ = bev_occupancy(&voxelize(&scene.points, &grid, 77), &grid);
    let map = build_assignment(&occ, &scene.gts, 64.0, RelationEncoding::Quadrant, 3, &grid)
        .expect("assignment");

    let ignored: Vec<(usize, usize)> = (0..map.rows())
        .flat_map(|i| (0..map.cols()).map(move |j| (i, j)))
        .filter(|&(i, j)| map.state(i, j) == CellState::Ignored)
        .collect();
    assert!(
        ignored.len() >= 10,
        "scene produced only {} ignored cells",
        ignored.len()
    );

    let layout = HeadLayout::standard(3, &grid, RelationEncoding::Quadrant).expect("layout");
    let (rows, cols) = grid.output_dims();
    let mut rng = TestRng(0xFEED);
    let mut random_field = |width: usize, lo: f64, hi: f64| {
        let data = (0..rows * cols * width)
            .map(|_| lo + (hi - lo) * rng.next_f64())
            .collect();
        Field::from_data(rows, cols, width, data).expect("field")
    };
    let mut head = HeadOutput {
        class_scores: random_field(layout.num_classes, 0.05, 0.95),
        reg: random_field(layout.reg_width(), -3.0, 3.0),
        relation: random_field(layout.relation.arity(), 0.05, 0.95),
        layout,
    };

    let fp = FocalParams::default();
    let (cls0, cls_grad0) = classification_loss(&head.class_scores, &map, &fp).expect("cls");
    let (loc0, reg_grad0) = regression_loss(&head, &map).expect("reg");
    let (rel0, rel_grad0) = relation_loss(&head.relation, &map).expect("rel");

    // Poison every ignored cell in every field with NaN and huge values.
    // Any arithmetic touching them would show up in the loss or gradient.
    for (k, &(i, j)) in ignored.iter().enumerate() {
        let poison = if k % 2 == 0 { f64::NAN } else { 1e300 };
        head.class_scores.cell_mut(i, j).fill(poison);
        head.reg.cell_mut(i, j).fill(-poison);
        head.relation.cell_mut(i, j).fill(poison);
    }

    let (cls1, cls_grad1) = classification_loss(&head.class_scores, &map, &fp).expect("cls");
    let (loc1, reg_grad1) = regression_loss(&head, &map).expect("reg");
    let (rel1, rel_grad1) = relation_loss(&head.relation, &map).expect("rel");

    assert_eq!(cls0.to_bits(), cls1.to_bits(), "classification loss moved");
    assert_eq!(loc0.to_bits(), loc1.to_bits(), "regression loss moved");
    assert_eq!(rel0.to_bits(), rel1.to_bits(), "relation loss moved");
    for (name, a, b) in [
        ("classification", &cls_grad0, &cls_grad1),
        ("regression", &reg_grad0, &reg_grad1),
        ("relation", &rel_grad0, &rel_grad1),
    ] {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits(), "{name} gradient entry moved");
        }
    }
    println!(
        "acceptance 6 (bit-exact masking at ignored cells): PASS {} cells poisoned",
        ignored.len()
    );
}

#[test]
fn criterion_7_ap40_hand_case_and_exhaustive_oracle() {
    // Three ranked detections (TP, FP, TP) against two ground truths:
    // interpolated precision is 1 up to recall 1/2 and 2/3 after, so
    // AP40 = (20 * 1 + 20 * 2/3) / 40 = 5/6.
    let hand = ap40(&[(0.9, true), (0.8, false), (0.7, true)], 2).expect("ap");
    assert!((hand - 5.0 / 6.0).abs() < 1e-12, "hand case gave {hand}");
    let outcome = expect_pass(matching_suite(500, 2037));
    println!(
        "acceptance 7 (AP40 hand case 5/6 and exhaustive matching oracle): PASS {} instances",
        outcome.cases
    );
}

#[test]
fn criterion_8_sparsity_recall_buckets() {
    expect_pass(recall_suite(500, 2038));

    // Synthetic scenes with 1..400 points per object; the injected
    // detector keeps each object with a probability that falls with its
    // point count, using exact ground-truth boxes, so expected bucket
    // counts are computable directly.
    let grid = oracle_grid();
    let spec = oracle_synth_spec();
    let buckets = default_buckets();
    let mut rng = TestRng(0xD0D0);
    let mut scenes = Vec::new();
    let mut expected_gt = vec![0usize; buckets.len()];
    let mut expected_matched = vec![0usize; buckets.len()];
    for id in 0..60u64 {
        let scene = synth_scene(&spec, &grid, id, derive_seed(2038, &[3, id]))
            .expect("synth scene");
        let mut dets = Vec::new();
        for gt in &scene.gts {
            let drop = match gt.num_points {
                0..=10 => 0.7,
                11..=50 => 0.4,
                51..=200 => 0.15,
                _ => 0.02,
            };
            let kept = rng.next_f64() >= drop;
            if kept {
                dets.push(Detection::new(
                    gt.class_id,
                    0.5 + 0.5 * rng.next_f64(),
                    gt.box3d,
                ));
            }
            for (b, bucket) in buckets.iter().enumerate() {
                if bucket.contains(gt.num_points) {
                    expected_gt[b] += 1;
                    if kept {
                        expected_matched[b] += 1;
                    }
                }
            }
        }
        scenes.push((dets, scene.gts.clone()));
    }
    let report = evaluate_scenes(&scenes, 3, &EvalConfig::kitti()).expect("evaluate");
    assert_eq!(report.recall_buckets.len(), buckets.len());
    let mut parts = Vec::new();
    for (b, r) in report.recall_buckets.iter().enumerate() {
        assert_eq!(r.bucket, buckets[b]);
        assert_eq!(
            (r.num_gt, r.matched),
            (expected_gt[b], expected_matched[b]),
            "bucket {} disagrees with direct counting",
            r.bucket.label()
        );
        assert!(
            r.num_gt > 0,
            "bucket {} holds no objects; sparsity spread too narrow",
            r.bucket.label()
        );
        parts.push(format!(
            "{}={}/{}",
            r.bucket.label(),
            r.matched,
            r.num_gt
        ));
    }
    println!(
        "acceptance 8 (sparsity recall buckets vs counting): PASS {}",
        parts.join(" ")
    );
}

/// Runs the CLI binary, asserting success.
fn run_cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_hotspots"))
        .args(args)
        .output()
        .expect("spawn hotspots binary");
    assert!(
        out.status.success(),
        "hotspots {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Collects every file under `dir` as (relative path, bytes).
fn tree_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, map: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).expect("read_dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                walk(root, &path, map);
            } else {
                let rel = path.strip_prefix(root).expect("relative path").to_path_buf();
                map.insert(rel, std::fs::read(&path).expect("read file"));
            }
        }
    }
    let mut map = BTreeMap::new();
    walk(dir, dir, &mut map);
    map
}

/// Drives all eight subcommands into `dir` with the given worker count.
fn run_pipeline(config: &Path, dir: &Path, jobs: &str) {
    let base = |cmd_args: &[&str]| {
        let mut args = vec![
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "99",
            "--jobs",
            jobs,
            "--output-dir",
            dir.to_str().unwrap(),
        ];
        args.extend_from_slice(cmd_args);
        run_cli(&args);
    };
    let scenes = dir.join("scenes");
    let heads = dir.join("heads");
    let detections = dir.join("detections.jsonl");
    base(&["synth"]);
    base(&["voxelize", "--scenes", scenes.to_str().unwrap()]);
    base(&["assign", "--scenes", scenes.to_str().unwrap()]);
    base(&["encode", "--scenes", scenes.to_str().unwrap()]);
    base(&[
        "losses",
        "--scenes",
        scenes.to_str().unwrap(),
        "--heads",
        heads.to_str().unwrap(),
    ]);
    base(&["detect", "--heads", heads.to_str().unwrap()]);
    base(&[
        "eval",
        "--scenes",
        scenes.to_str().unwrap(),
        "--detections",
        detections.to_str().unwrap(),
    ]);
    base(&["oracle-check"]);
}

#[test]
fn criterion_9_cli_outputs_are_byte_identical_across_jobs_and_reruns() {
    let root = tempfile::tempdir().expect("tempdir");
    let config = root.path().join("run.toml");
    std::fs::write(
        &config,
        "num_scenes = 4\n\
         [grid]\n\
         x_range = [0.0, 25.6]\n\
         y_range = [-12.8, 12.8]\n\
         z_range = [-3.0, 1.0]\n\
         voxel_size = [0.1, 0.1, 0.2]\n\
         max_points_per_voxel = 5\n\
         downsample = 4\n\
         [synth]\n\
         num_objects = 3\n\
         clutter_points = 120\n",
    )
    .expect("write config");

    let jobs1 = root.path().join("jobs1");
    let jobs8 = root.path().join("jobs8");
    let rerun = root.path().join("rerun");
    run_pipeline(&config, &jobs1, "1");
    run_pipeline(&config, &jobs8, "8");
    run_pipeline(&config, &rerun, "1");

    let a = tree_bytes(&jobs1);
    let b = tree_bytes(&jobs8);
    let c = tree_bytes(&rerun);
    assert_eq!(
        a.keys().collect::<Vec<_>>(),
        b.keys().collect::<Vec<_>>(),
        "jobs 1 and jobs 8 runs produced different file sets"
    );
    for (path, bytes) in &a {
        assert_eq!(
            bytes,
            &b[path],
            "{} differs between --jobs 1 and --jobs 8",
            path.display()
        );
        assert_eq!(
            bytes,
            &c[path],
            "{} differs between two --jobs 1 runs",
            path.display()
        );
    }
    println!(
        "acceptance 9 (CLI byte determinism across jobs and reruns): PASS {} files x 3 runs",
        a.len()
    );
}
