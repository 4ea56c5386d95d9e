//! Python bindings for the hotspot detection pipeline: boxes, grids and
//! scenes in, assignments, head tensors, detections and evaluation
//! reports out. Thin wrappers over the core crate; all heavy lifting
//! stays in Rust.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use hotspots_core::assignment::{
    build_assignment, max_hotspots, AssignmentMap, CellState, GroundTruth, RelationEncoding,
};
use hotspots_core::codec::{encode_head, HeadEncodeMode, HeadLayout, HeadOutput};
use hotspots_core::evaluator::{
    ap40, evaluate_scenes, iou, volumetric_iou, EvalConfig, IouKind,
};
use hotspots_core::geometry::{rotated_iou_bev, Box3D, Point3};
use hotspots_core::inference::{extract_candidates, rotated_nms, Detection, InferenceConfig};
use hotspots_core::io::head_file;
use hotspots_core::io::synth::{synth_scene, PointDensity, SynthSpec};
use hotspots_core::loss::{
    classification_loss, regression_loss, relation_loss, total_loss, FocalParams, LossWeights,
};
use hotspots_core::oracle::{run_all, OracleScale};
use hotspots_core::voxelizer::{bev_occupancy, voxelize, GridConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_encoding(s: &str) -> PyResult<RelationEncoding> {
    Ok(match s {
        "none" => RelationEncoding::None,
        "lr" | "left_right" => RelationEncoding::LeftRight,
        "fb" | "front_back" => RelationEncoding::FrontBack,
        "quadrant" => RelationEncoding::Quadrant,
        "8dir" | "eight_dir" => RelationEncoding::EightDir,
        "deviation" => RelationEncoding::Deviation,
        _ => {
            return Err(value_err(format!(
                "unknown encoding '{s}', expected none|lr|fb|quadrant|8dir|deviation"
            )))
        }
    })
}

fn parse_mode(s: &str) -> PyResult<HeadEncodeMode> {
    Ok(match s {
        "saturate" => HeadEncodeMode::Saturate,
        "exact" => HeadEncodeMode::Exact,
        _ => return Err(value_err(format!("unknown mode '{s}', expected saturate|exact"))),
    })
}

fn parse_iou_kind(s: &str) -> PyResult<IouKind> {
    Ok(match s {
        "bev" => IouKind::Bev,
        "volumetric" => IouKind::Volumetric,
        _ => return Err(value_err(format!("unknown IoU kind '{s}', expected bev|volumetric"))),
    })
}

/// Oriented upright 3D box (center, sizes, BEV yaw).
#[pyclass(name = "Box3D", from_py_object)]
#[derive(Clone)]
struct PyBox3D {
    inner: Box3D,
}

#[pymethods]
impl PyBox3D {
    #[new]
    fn new(cx: f64, cy: f64, cz: f64, l: f64, w: f64, h: f64, yaw: f64) -> PyResult<Self> {
        Ok(PyBox3D {
            inner: Box3D::new(cx, cy, cz, l, w, h, yaw).map_err(value_err)?,
        })
    }

    #[getter]
    fn cx(&self) -> f64 {
        self.inner.cx
    }
    #[getter]
    fn cy(&self) -> f64 {
        self.inner.cy
    }
    #[getter]
    fn cz(&self) -> f64 {
        self.inner.cz
    }
    #[getter]
    fn l(&self) -> f64 {
        self.inner.l
    }
    #[getter]
    fn w(&self) -> f64 {
        self.inner.w
    }
    #[getter]
    fn h(&self) -> f64 {
        self.inner.h
    }
    #[getter]
    fn yaw(&self) -> f64 {
        self.inner.yaw
    }

    fn volume(&self) -> f64 {
        self.inner.volume()
    }

    fn __repr__(&self) -> String {
        let b = &self.inner;
        format!(
            "Box3D(cx={}, cy={}, cz={}, l={}, w={}, h={}, yaw={})",
            b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw
        )
    }
}

/// Labeled object: class id, box, LiDAR point count.
#[pyclass(name = "GroundTruth", from_py_object)]
#[derive(Clone)]
struct PyGroundTruth {
    inner: GroundTruth,
}

#[pymethods]
impl PyGroundTruth {
    #[new]
    fn new(class_id: u32, box3d: PyBox3D, num_points: u32) -> Self {
        PyGroundTruth {
            inner: GroundTruth::new(class_id, box3d.inner, num_points),
        }
    }

    #[getter]
    fn class_id(&self) -> u32 {
        self.inner.class_id
    }
    #[getter]
    fn num_points(&self) -> u32 {
        self.inner.num_points
    }
    #[getter]
    fn box3d(&self) -> PyBox3D {
        PyBox3D {
            inner: self.inner.box3d,
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "GroundTruth(class_id={}, num_points={}, box3d={})",
            self.inner.class_id,
            self.inner.num_points,
            PyBox3D {
                inner: self.inner.box3d
            }
            .__repr__()
        )
    }
}

/// Scored detection.
#[pyclass(name = "Detection", from_py_object)]
#[derive(Clone)]
struct PyDetection {
    inner: Detection,
}

#[pymethods]
impl PyDetection {
    #[new]
    fn new(class_id: u32, score: f64, box3d: PyBox3D) -> Self {
        PyDetection {
            inner: Detection::new(class_id, score, box3d.inner),
        }
    }

    #[getter]
    fn class_id(&self) -> u32 {
        self.inner.class_id
    }
    #[getter]
    fn score(&self) -> f64 {
        self.inner.score
    }
    #[getter]
    fn box3d(&self) -> PyBox3D {
        PyBox3D {
            inner: self.inner.box3d,
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Detection(class_id={}, score={}, box3d={})",
            self.inner.class_id,
            self.inner.score,
            PyBox3D {
                inner: self.inner.box3d
            }
            .__repr__()
        )
    }
}

/// Voxel grid geometry plus BEV downsampling.
#[pyclass(name = "GridConfig", skip_from_py_object)]
#[derive(Clone)]
struct PyGridConfig {
    inner: GridConfig,
}

#[pymethods]
impl PyGridConfig {
    #[new]
    fn new(
        x_range: (f64, f64),
        y_range: (f64, f64),
        z_range: (f64, f64),
        voxel_size: (f64, f64, f64),
        max_points_per_voxel: usize,
        downsample: usize,
    ) -> PyResult<Self> {
        Ok(PyGridConfig {
            inner: GridConfig::new(
                x_range,
                y_range,
                z_range,
                voxel_size,
                max_points_per_voxel,
                downsample,
            )
            .map_err(value_err)?,
        })
    }

    /// KITTI car-range defaults (70.4 x 80 m, stride-8 BEV).
    #[staticmethod]
    fn kitti() -> Self {
        PyGridConfig {
            inner: GridConfig::kitti(),
        }
    }

    /// (rows, cols) of the BEV output grid.
    fn output_dims(&self) -> (usize, usize) {
        self.inner.output_dims()
    }

    /// World (x, y) center of BEV cell (i, j).
    fn cell_center(&self, i: usize, j: usize) -> PyResult<(f64, f64)> {
        self.inner.cell_center(i, j).map_err(value_err)
    }
}

/// Synthetic scene: id, points as (x, y, z, intensity) tuples, labels.
#[pyclass(name = "Scene", skip_from_py_object)]
#[derive(Clone)]
struct PyScene {
    #[pyo3(get)]
    id: u64,
    #[pyo3(get)]
    points: Vec<(f64, f64, f64, f64)>,
    #[pyo3(get)]
    gts: Vec<PyGroundTruth>,
}

/// Per-cell training targets: hotspot cells plus negative/ignored masks.
#[pyclass(name = "Assignment")]
struct PyAssignment {
    inner: AssignmentMap,
}

#[pymethods]
impl PyAssignment {
    #[getter]
    fn rows(&self) -> usize {
        self.inner.rows()
    }
    #[getter]
    fn cols(&self) -> usize {
        self.inner.cols()
    }
    #[getter]
    fn num_hotspots(&self) -> usize {
        self.inner.num_hotspots()
    }

    /// "negative", "ignored" or "hotspot" at BEV cell (i, j).
    fn state(&self, i: usize, j: usize) -> PyResult<&'static str> {
        if i >= self.inner.rows() || j >= self.inner.cols() {
            return Err(value_err(format!("cell ({i}, {j}) out of bounds")));
        }
        Ok(match self.inner.state(i, j) {
            CellState::Negative => "negative",
            CellState::Ignored => "ignored",
            CellState::Hotspot { .. } => "hotspot",
        })
    }

    /// Hotspot cells as (i, j, object_index, class_id), row-major order.
    fn hotspots(&self) -> Vec<(usize, usize, u32, u32)> {
        self.inner
            .hotspots()
            .map(|(&(i, j), t)| (i, j, t.object_index, t.class_id))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Assignment({}x{}, {} hotspots)",
            self.inner.rows(),
            self.inner.cols(),
            self.inner.num_hotspots()
        )
    }
}

/// Dense detection-head tensor (class scores, regression, relation).
#[pyclass(name = "HeadOutput")]
struct PyHeadOutput {
    inner: HeadOutput,
}

#[pymethods]
impl PyHeadOutput {
    #[getter]
    fn rows(&self) -> usize {
        self.inner.rows()
    }
    #[getter]
    fn cols(&self) -> usize {
        self.inner.cols()
    }
    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.layout.num_classes
    }

    /// Writes the self-describing binary head format.
    fn save(&self, path: &str) -> PyResult<()> {
        head_file::write_head(std::path::Path::new(path), &self.inner).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyHeadOutput {
            inner: head_file::read_head(std::path::Path::new(path)).map_err(value_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "HeadOutput({}x{}, {} classes)",
            self.inner.rows(),
            self.inner.cols(),
            self.inner.layout.num_classes
        )
    }
}

/// Loss values for one head output against one assignment.
#[pyclass(name = "Losses", skip_from_py_object)]
#[derive(Clone)]
struct PyLosses {
    #[pyo3(get)]
    cls: f64,
    #[pyo3(get)]
    loc: f64,
    #[pyo3(get)]
    relation: f64,
    #[pyo3(get)]
    total: f64,
}

#[pymethods]
impl PyLosses {
    fn __repr__(&self) -> String {
        format!(
            "Losses(cls={}, loc={}, relation={}, total={})",
            self.cls, self.loc, self.relation, self.total
        )
    }
}

/// Per-class AP row of an evaluation report.
#[pyclass(name = "ClassMetrics", skip_from_py_object)]
#[derive(Clone)]
struct PyClassMetrics {
    #[pyo3(get)]
    class_id: u32,
    #[pyo3(get)]
    num_gt: usize,
    #[pyo3(get)]
    num_detections: usize,
    #[pyo3(get)]
    true_positives: usize,
    #[pyo3(get)]
    ap40: Option<f64>,
}

/// Point-count recall bucket of an evaluation report.
#[pyclass(name = "BucketRecall", skip_from_py_object)]
#[derive(Clone)]
struct PyBucketRecall {
    #[pyo3(get)]
    min: u32,
    #[pyo3(get)]
    max: Option<u32>,
    #[pyo3(get)]
    num_gt: usize,
    #[pyo3(get)]
    matched: usize,
    #[pyo3(get)]
    recall: Option<f64>,
}

/// Full evaluation report.
#[pyclass(name = "EvalReport")]
struct PyEvalReport {
    #[pyo3(get)]
    per_class: Vec<PyClassMetrics>,
    #[pyo3(get)]
    recall_buckets: Vec<PyBucketRecall>,
}

/// One reference-oracle suite verdict.
#[pyclass(name = "OracleOutcome", skip_from_py_object)]
#[derive(Clone)]
struct PyOracleOutcome {
    #[pyo3(get)]
    name: String,
    #[pyo3(get)]
    cases: usize,
    #[pyo3(get)]
    worst: f64,
    #[pyo3(get)]
    tolerance: f64,
    #[pyo3(get)]
    passed: bool,
    #[pyo3(get)]
    detail: String,
}

// ---------------------------------------------------------------------------
// Operations.

/// Rotated BEV IoU of two oriented boxes.
#[pyfunction]
fn iou_bev(a: &PyBox3D, b: &PyBox3D) -> f64 {
    rotated_iou_bev(&a.inner, &b.inner)
}

/// Volumetric IoU (BEV intersection times vertical overlap).
#[pyfunction]
fn iou_3d(a: &PyBox3D, b: &PyBox3D) -> f64 {
    volumetric_iou(&a.inner, &b.inner)
}

/// AP at 40 recall points over (score, is_tp) pairs; None without GT.
#[pyfunction(name = "ap40")]
fn py_ap40(scored: Vec<(f64, bool)>, num_gt: usize) -> Option<f64> {
    ap40(&scored, num_gt)
}

/// Hotspot cap for one object: max(1, floor(c / volume)); None when the
/// budget is effectively unbounded.
#[pyfunction]
fn hotspot_cap(gt: &PyGroundTruth, c: f64) -> PyResult<Option<u64>> {
    if !(c > 0.0) {
        return Err(value_err(format!("budget c must be positive, got {c}")));
    }
    let m = max_hotspots(&gt.inner, c);
    Ok((m != usize::MAX).then_some(m as u64))
}

/// Generates one seeded synthetic scene with surface-biased points.
#[pyfunction(name = "synth_scene")]
#[pyo3(signature = (grid, id, seed, num_objects=8, exact_points=None, min_points=1,
                    max_points=400, clutter_points=300, surface_noise=0.05))]
#[allow(clippy::too_many_arguments)]
fn py_synth_scene(
    grid: &PyGridConfig,
    id: u64,
    seed: u64,
    num_objects: usize,
    exact_points: Option<u32>,
    min_points: u32,
    max_points: u32,
    clutter_points: usize,
    surface_noise: f64,
) -> PyResult<PyScene> {
    let density = match exact_points {
        Some(count) => PointDensity::Exact { count },
        None => PointDensity::Range {
            min: min_points,
            max: max_points,
        },
    };
    let spec = SynthSpec {
        num_objects,
        density,
        clutter_points,
        surface_noise,
        ..SynthSpec::default()
    };
    let scene = synth_scene(&spec, &grid.inner, id, seed).map_err(value_err)?;
    Ok(PyScene {
        id: scene.id,
        points: scene
            .points
            .iter()
            .map(|p| (p.x, p.y, p.z, p.intensity))
            .collect(),
        gts: scene
            .gts
            .into_iter()
            .map(|gt| PyGroundTruth { inner: gt })
            .collect(),
    })
}

/// Voxelizes points, reduces to BEV occupancy, and assigns hotspots.
#[pyfunction(name = "build_assignment")]
#[pyo3(signature = (points, gts, grid, c=64.0, encoding="quadrant", num_classes=3, seed=0))]
#[allow(clippy::too_many_arguments)]
fn py_build_assignment(
    points: Vec<(f64, f64, f64, f64)>,
    gts: Vec<PyGroundTruth>,
    grid: &PyGridConfig,
    c: f64,
    encoding: &str,
    num_classes: usize,
    seed: u64,
) -> PyResult<PyAssignment> {
    let pts: Vec<Point3> = points
        .into_iter()
        .map(|(x, y, z, i)| Point3::new(x, y, z, i))
        .collect();
    let occ = bev_occupancy(&voxelize(&pts, &grid.inner, seed), &grid.inner);
    let gts: Vec<GroundTruth> = gts.into_iter().map(|g| g.inner).collect();
    let map = build_assignment(
        &occ,
        &gts,
        c,
        parse_encoding(encoding)?,
        num_classes,
        &grid.inner,
    )
    .map_err(value_err)?;
    Ok(PyAssignment { inner: map })
}

/// Encodes an assignment's targets into a dense head output.
#[pyfunction]
#[pyo3(signature = (assignment, grid, mode="exact", score=1.0))]
fn encode_ground_truth(
    assignment: &PyAssignment,
    grid: &PyGridConfig,
    mode: &str,
    score: f64,
) -> PyResult<PyHeadOutput> {
    let layout = HeadLayout::standard(
        assignment.inner.num_classes(),
        &grid.inner,
        assignment.inner.encoding(),
    )
    .map_err(value_err)?;
    let head =
        encode_head(&assignment.inner, &layout, parse_mode(mode)?, score).map_err(value_err)?;
    Ok(PyHeadOutput { inner: head })
}

/// Focal + smooth-L1 + relation losses of a head against an assignment.
#[pyfunction(name = "losses")]
#[pyo3(signature = (head, assignment, alpha=0.25, gamma=2.0, delta=1.0, beta=1.0, zeta=1.0))]
#[allow(clippy::too_many_arguments)]
fn py_losses(
    head: &PyHeadOutput,
    assignment: &PyAssignment,
    alpha: f64,
    gamma: f64,
    delta: f64,
    beta: f64,
    zeta: f64,
) -> PyResult<PyLosses> {
    let fp = FocalParams::new(alpha, gamma).map_err(value_err)?;
    let weights = LossWeights::new(delta, beta, zeta).map_err(value_err)?;
    let (cls, _) =
        classification_loss(&head.inner.class_scores, &assignment.inner, &fp).map_err(value_err)?;
    let (loc, _) = regression_loss(&head.inner, &assignment.inner).map_err(value_err)?;
    let (relation, _) =
        relation_loss(&head.inner.relation, &assignment.inner).map_err(value_err)?;
    Ok(PyLosses {
        cls,
        loc,
        relation,
        total: total_loss(cls, loc, relation, &weights),
    })
}

/// Thresholds, decodes and NMS-filters a head output into detections.
#[pyfunction]
#[pyo3(signature = (head, grid, score_threshold=0.3, top_k=100, nms_iou=0.01))]
fn detect(
    head: &PyHeadOutput,
    grid: &PyGridConfig,
    score_threshold: f64,
    top_k: usize,
    nms_iou: f64,
) -> PyResult<Vec<PyDetection>> {
    let cfg = InferenceConfig::new(score_threshold, top_k, nms_iou).map_err(value_err)?;
    let candidates = extract_candidates(&head.inner, &cfg, &grid.inner).map_err(value_err)?;
    Ok(rotated_nms(&candidates, cfg.nms_iou_threshold)
        .into_iter()
        .map(|d| PyDetection { inner: d })
        .collect())
}

/// Evaluates (detections, ground truths) scene pairs: per-class AP40
/// plus point-count recall buckets.
#[pyfunction]
#[pyo3(signature = (scenes, num_classes, iou_kind="volumetric", class_thresholds=None,
                    default_threshold=0.5))]
fn evaluate(
    scenes: Vec<(Vec<PyDetection>, Vec<PyGroundTruth>)>,
    num_classes: usize,
    iou_kind: &str,
    class_thresholds: Option<Vec<f64>>,
    default_threshold: f64,
) -> PyResult<PyEvalReport> {
    let cfg = EvalConfig {
        iou_kind: parse_iou_kind(iou_kind)?,
        class_thresholds: class_thresholds
            .unwrap_or_else(|| EvalConfig::kitti().class_thresholds),
        default_threshold,
        buckets: EvalConfig::kitti().buckets,
    };
    let joined: Vec<(Vec<Detection>, Vec<GroundTruth>)> = scenes
        .into_iter()
        .map(|(dets, gts)| {
            (
                dets.into_iter().map(|d| d.inner).collect(),
                gts.into_iter().map(|g| g.inner).collect(),
            )
        })
        .collect();
    let report = evaluate_scenes(&joined, num_classes, &cfg).map_err(value_err)?;
    Ok(PyEvalReport {
        per_class: report
            .per_class
            .into_iter()
            .map(|m| PyClassMetrics {
                class_id: m.class_id,
                num_gt: m.num_gt,
                num_detections: m.num_detections,
                true_positives: m.true_positives,
                ap40: m.ap40,
            })
            .collect(),
        recall_buckets: report
            .recall_buckets
            .into_iter()
            .map(|b| PyBucketRecall {
                min: b.bucket.min,
                max: b.bucket.max,
                num_gt: b.num_gt,
                matched: b.matched,
                recall: b.recall,
            })
            .collect(),
    })
}

/// Matching IoU between a detection and a ground truth under a kind.
#[pyfunction]
#[pyo3(signature = (a, b, kind="volumetric"))]
fn matching_iou(a: &PyBox3D, b: &PyBox3D, kind: &str) -> PyResult<f64> {
    Ok(iou(&a.inner, &b.inner, parse_iou_kind(kind)?))
}

/// Runs every reference-oracle suite; `full` selects the slow scale.
#[pyfunction]
#[pyo3(signature = (full=false, seed=0))]
fn run_oracles(full: bool, seed: u64) -> Vec<PyOracleOutcome> {
    let scale = if full { OracleScale::Full } else { OracleScale::Quick };
    run_all(scale, seed)
        .into_iter()
        .map(|o| PyOracleOutcome {
            name: o.name,
            cases: o.cases,
            worst: o.worst,
            tolerance: o.tolerance,
            passed: o.passed,
            detail: o.detail,
        })
        .collect()
}

#[pymodule]
fn hotspots_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBox3D>()?;
    m.add_class::<PyGroundTruth>()?;
    m.add_class::<PyDetection>()?;
    m.add_class::<PyGridConfig>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyAssignment>()?;
    m.add_class::<PyHeadOutput>()?;
    m.add_class::<PyLosses>()?;
    m.add_class::<PyClassMetrics>()?;
    m.add_class::<PyBucketRecall>()?;
    m.add_class::<PyEvalReport>()?;
    m.add_class::<PyOracleOutcome>()?;
    m.add_function(wrap_pyfunction!(iou_bev, m)?)?;
    m.add_function(wrap_pyfunction!(iou_3d, m)?)?;
    m.add_function(wrap_pyfunction!(matching_iou, m)?)?;
    m.add_function(wrap_pyfunction!(py_ap40, m)?)?;
    m.add_function(wrap_pyfunction!(hotspot_cap, m)?)?;
    m.add_function(wrap_pyfunction!(py_synth_scene, m)?)?;
    m.add_function(wrap_pyfunction!(py_build_assignment, m)?)?;
    m.add_function(wrap_pyfunction!(encode_ground_truth, m)?)?;
    m.add_function(wrap_pyfunction!(py_losses, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_oracles, m)?)?;
    Ok(())
}
