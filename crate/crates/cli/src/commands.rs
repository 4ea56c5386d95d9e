//! Subcommand implementations. Every command echoes the fully resolved
//! configuration next to its outputs, derives per-scene seeds from the
//! base seed and the scene id, and orders records by scene id, so two
//! runs with the same seed produce byte-identical artifacts regardless
//! of `--jobs`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use hotspots_core::assignment::{build_assignment, max_hotspots, AssignmentMap, CellState};
use hotspots_core::codec::{encode_head, HeadLayout};
use hotspots_core::derive_seed;
use hotspots_core::evaluator::evaluate_scenes;
use hotspots_core::field::Field;
use hotspots_core::inference::{extract_candidates, rotated_nms, Detection};
use hotspots_core::io::head_file::{read_head, write_head};
use hotspots_core::io::report::{read_jsonl, write_jsonl};
use hotspots_core::io::scenes::{read_scene_dir, write_scene_dir};
use hotspots_core::io::synth::{synth_scene, SceneBundle};
use hotspots_core::loss::{classification_loss, regression_loss, relation_loss, total_loss};
use hotspots_core::oracle::{run_all, OracleScale};
use hotspots_core::voxelizer::{bev_occupancy, voxelize, GridConfig, OccupancyGrid};

use crate::config::RunConfig;

/// Stream tags keeping the per-scene synthesis and voxel-sampling RNG
/// streams independent of each other.
const SYNTH_STREAM: u64 = 1;
const VOXEL_STREAM: u64 = 2;

pub const VOXEL_STATS_SCHEMA: &str = "voxel_stats";
pub const ASSIGN_SCHEMA: &str = "assignment_report";
pub const HEAD_INDEX_SCHEMA: &str = "head_index";
pub const LOSS_SCHEMA: &str = "loss_report";
pub const DETECTIONS_SCHEMA: &str = "detections";
pub const EVAL_SCHEMA: &str = "eval_report";
pub const ORACLE_SCHEMA: &str = "oracle_report";

/// Shared command context: resolved config, output directory, worker
/// count.
pub struct Ctx {
    pub cfg: RunConfig,
    pub output_dir: PathBuf,
    pub jobs: usize,
}

impl Ctx {
    /// Runs `op` inside a worker pool of `jobs` threads.
    fn with_pool<T: Send>(&self, op: impl FnOnce() -> Result<T> + Send) -> Result<T> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .context("building worker pool")?
            .install(op)
    }

    fn echo_config(&self) -> Result<()> {
        self.cfg.echo(&self.output_dir)
    }

    fn voxel_seed(&self, scene_id: u64) -> u64 {
        derive_seed(self.cfg.seed, &[VOXEL_STREAM, scene_id])
    }

    /// Voxelizes one scene and reduces it to BEV occupancy.
    fn occupancy(&self, scene: &SceneBundle, grid: &GridConfig) -> OccupancyGrid {
        let vg = voxelize(&scene.points, grid, self.voxel_seed(scene.id));
        bev_occupancy(&vg, grid)
    }

    /// Occupancy plus hotspot assignment for one scene.
    fn assignment(&self, scene: &SceneBundle, grid: &GridConfig) -> Result<AssignmentMap> {
        let occ = self.occupancy(scene, grid);
        Ok(build_assignment(
            &occ,
            &scene.gts,
            self.cfg.c,
            self.cfg.encoding,
            self.cfg.num_classes(),
            grid,
        )?)
    }
}

/// Loads a scene directory and checks its class ids against the
/// configured class names.
fn load_scenes(ctx: &Ctx, dir: &Path) -> Result<Vec<SceneBundle>> {
    let mut scenes =
        read_scene_dir(dir).with_context(|| format!("reading scenes from {}", dir.display()))?;
    scenes.sort_by_key(|s| s.id);
    for s in &scenes {
        for gt in &s.gts {
            if gt.class_id as usize >= ctx.cfg.num_classes() {
                bail!(
                    "scene {} uses class id {} but only {} class names are configured \
                     (adjust --class-names)",
                    s.id,
                    gt.class_id,
                    ctx.cfg.num_classes()
                );
            }
        }
    }
    Ok(scenes)
}

fn head_file_name(id: u64) -> String {
    format!("head_{id:06}.bin")
}

/// Largest absolute entry of a gradient field.
fn sup_norm(f: &Field) -> f64 {
    f.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

// ---------------------------------------------------------------------------
// Report records.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelStats {
    pub id: u64,
    pub num_voxels: usize,
    /// Points kept after per-voxel downsampling.
    pub points_retained: usize,
    pub occupied_cells: usize,
    pub bev_rows: usize,
    pub bev_cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectReport {
    pub object_index: u32,
    pub class_id: u32,
    pub volume: f64,
    /// Hotspot cap M = max(1, floor(C / volume)); absent when the budget
    /// is unbounded.
    pub cap: Option<u64>,
    pub hotspots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignReport {
    pub id: u64,
    pub rows: usize,
    pub cols: usize,
    pub negative_cells: usize,
    pub ignored_cells: usize,
    pub hotspot_cells: usize,
    pub objects: Vec<ObjectReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadIndexEntry {
    pub id: u64,
    pub file: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub id: u64,
    pub cls: f64,
    pub loc: f64,
    pub relation: f64,
    pub total: f64,
    pub cls_grad_max: f64,
    pub reg_grad_max: f64,
    pub relation_grad_max: f64,
    pub hotspots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDetections {
    pub id: u64,
    pub detections: Vec<Detection>,
}

/// One evaluation table row: a per-class AP entry or a point-count
/// recall bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalRow {
    ClassAp {
        class_id: u32,
        class_name: String,
        num_gt: usize,
        num_detections: usize,
        true_positives: usize,
        ap40: Option<f64>,
    },
    BucketRecall {
        min: u32,
        max: Option<u32>,
        num_gt: usize,
        matched: usize,
        recall: Option<f64>,
    },
}

// ---------------------------------------------------------------------------
// Subcommands.

pub fn cmd_synth(ctx: &Ctx) -> Result<()> {
    let grid = ctx.cfg.grid.build()?;
    let spec = ctx.cfg.synth.build();
    let ids: Vec<u64> = (0..ctx.cfg.num_scenes as u64).collect();
    let scenes: Vec<SceneBundle> = ctx.with_pool(|| {
        ids.par_iter()
            .map(|&id| {
                let seed = derive_seed(ctx.cfg.seed, &[SYNTH_STREAM, id]);
                Ok(synth_scene(&spec, &grid, id, seed)?)
            })
            .collect()
    })?;
    let dir = ctx.output_dir.join("scenes");
    write_scene_dir(&dir, &scenes)?;
    ctx.echo_config()?;
    let points: usize = scenes.iter().map(|s| s.points.len()).sum();
    let objects: usize = scenes.iter().map(|s| s.gts.len()).sum();
    println!(
        "synth: {} scenes, {} objects, {} points -> {}",
        scenes.len(),
        objects,
        points,
        dir.display()
    );
    Ok(())
}

pub fn cmd_voxelize(ctx: &Ctx, scenes_dir: &Path) -> Result<()> {
    let grid = ctx.cfg.grid.build()?;
    let scenes = load_scenes(ctx, scenes_dir)?;
    let stats: Vec<VoxelStats> = ctx.with_pool(|| {
        scenes
            .par_iter()
            .map(|s| {
                let vg = voxelize(&s.points, &grid, ctx.voxel_seed(s.id));
                let occ = bev_occupancy(&vg, &grid);
                let (rows, cols) = grid.output_dims();
                let occupied = (0..rows)
                    .map(|i| (0..cols).filter(|&j| occ.occupied(i, j)).count())
                    .sum();
                Ok(VoxelStats {
                    id: s.id,
                    num_voxels: vg.len(),
                    points_retained: vg.iter().map(|(_, v)| v.count).sum(),
                    occupied_cells: occupied,
                    bev_rows: rows,
                    bev_cols: cols,
                })
            })
            .collect()
    })?;
    std::fs::create_dir_all(&ctx.output_dir)?;
    let path = ctx.output_dir.join("voxel_stats.jsonl");
    write_jsonl(&path, VOXEL_STATS_SCHEMA, 1, &stats)?;
    ctx.echo_config()?;
    println!("voxelize: {} scenes -> {}", stats.len(), path.display());
    Ok(())
}

pub fn cmd_assign(ctx: &Ctx, scenes_dir: &Path) -> Result<()> {
    let grid = ctx.cfg.grid.build()?;
    let scenes = load_scenes(ctx, scenes_dir)?;
    let reports: Vec<AssignReport> = ctx.with_pool(|| {
        scenes
            .par_iter()
            .map(|s| {
                let map = ctx.assignment(s, &grid)?;
                let mut objects: Vec<ObjectReport> = s
                    .gts
                    .iter()
                    .enumerate()
                    .map(|(k, gt)| {
                        let cap = max_hotspots(gt, ctx.cfg.c);
                        ObjectReport {
                            object_index: k as u32,
                            class_id: gt.class_id,
                            volume: gt.box3d.volume(),
                            cap: (cap != usize::MAX).then_some(cap as u64),
                            hotspots: 0,
                        }
                    })
                    .collect();
                let (mut neg, mut ign) = (0usize, 0usize);
                for i in 0..map.rows() {
                    for j in 0..map.cols() {
                        match map.state(i, j) {
                            CellState::Negative => neg += 1,
                            CellState::Ignored => ign += 1,
                            CellState::Hotspot { object_index, .. } => {
                                objects[object_index as usize].hotspots += 1;
                            }
                        }
                    }
                }
                Ok(AssignReport {
                    id: s.id,
                    rows: map.rows(),
                    cols: map.cols(),
                    negative_cells: neg,
                    ignored_cells: ign,
                    hotspot_cells: map.num_hotspots(),
                    objects,
                })
            })
            .collect()
    })?;
    std::fs::create_dir_all(&ctx.output_dir)?;
    let path = ctx.output_dir.join("assignments.jsonl");
    write_jsonl(&path, ASSIGN_SCHEMA, 1, &reports)?;
    ctx.echo_config()?;
    let hotspots: usize = reports.iter().map(|r| r.hotspot_cells).sum();
    println!(
        "assign: {} scenes, {} hotspot cells -> {}",
        reports.len(),
        hotspots,
        path.display()
    );
    Ok(())
}

pub fn cmd_encode(ctx: &Ctx, scenes_dir: &Path) -> Result<()> {
    let grid = ctx.cfg.grid.build()?;
    let scenes = load_scenes(ctx, scenes_dir)?;
    let layout = HeadLayout::standard(ctx.cfg.num_classes(), &grid, ctx.cfg.encoding)?;
    let heads_dir = ctx.output_dir.join("heads");
    std::fs::create_dir_all(&heads_dir)?;
    // Head files are written inside the worker loop (one file per scene,
    // no shared output), keeping peak memory at jobs x one head tensor.
    let entries: Vec<HeadIndexEntry> = ctx.with_pool(|| {
        scenes
            .par_iter()
            .map(|s| {
                let map = ctx.assignment(s, &grid)?;
                let head = encode_head(&map, &layout, ctx.cfg.encode_mode, ctx.cfg.encode_score)?;
                let file = head_file_name(s.id);
                write_head(&heads_dir.join(&file), &head)?;
                Ok(HeadIndexEntry {
                    id: s.id,
                    file,
                    rows: head.rows(),
                    cols: head.cols(),
                })
            })
            .collect()
    })?;
    write_jsonl(&heads_dir.join("index.jsonl"), HEAD_INDEX_SCHEMA, 1, &entries)?;
    ctx.echo_config()?;
    println!(
        "encode: {} head files -> {}",
        entries.len(),
        heads_dir.display()
    );
    Ok(())
}

/// Reads a head index and returns entries sorted by scene id.
fn load_head_index(heads_dir: &Path) -> Result<Vec<HeadIndexEntry>> {
    let path = heads_dir.join("index.jsonl");
    let mut entries: Vec<HeadIndexEntry> = read_jsonl(&path, HEAD_INDEX_SCHEMA, 1)
        .with_context(|| format!("reading head index {}", path.display()))?;
    entries.sort_by_key(|e| e.id);
    Ok(entries)
}

pub fn cmd_losses(ctx: &Ctx, scenes_dir: &Path, heads_dir: &Path) -> Result<()> {
    let grid = ctx.cfg.grid.build()?;
    let scenes = load_scenes(ctx, scenes_dir)?;
    let index = load_head_index(heads_dir)?;
    let fp = ctx.cfg.focal.build()?;
    let weights = ctx.cfg.weights.build()?;
    let records: Vec<LossRecord> = ctx.with_pool(|| {
        scenes
            .par_iter()
            .map(|s| {
                let entry = index
                    .iter()
                    .find(|e| e.id == s.id)
                    .with_context(|| format!("no head output for scene {}", s.id))?;
                let head = read_head(&heads_dir.join(&entry.file))?;
                let map = ctx.assignment(s, &grid)?;
                let (cls, cls_grad) = classification_loss(&head.class_scores, &map, &fp)?;
                let (loc, reg_grad) = regression_loss(&head, &map)?;
                let (rel, rel_grad) = relation_loss(&head.relation, &map)?;
                Ok(LossRecord {
                    id: s.id,
                    cls,
                    loc,
                    relation: rel,
                    total: total_loss(cls, loc, rel, &weights),
                    cls_grad_max: sup_norm(&cls_grad),
                    reg_grad_max: sup_norm(&reg_grad),
                    relation_grad_max: sup_norm(&rel_grad),
                    hotspots: map.num_hotspots(),
                })
            })
            .collect()
    })?;
    std::fs::create_dir_all(&ctx.output_dir)?;
    let path = ctx.output_dir.join("losses.jsonl");
    write_jsonl(&path, LOSS_SCHEMA, 1, &records)?;
    ctx.echo_config()?;
    let mean = records.iter().map(|r| r.total).sum::<f64>() / records.len().max(1) as f64;
    println!(
        "losses: {} scenes, mean total {:.6} -> {}",
        records.len(),
        mean,
        path.display()
    );
    Ok(())
}

pub fn cmd_detect(ctx: &Ctx, heads_dir: &Path) -> Result<()> {
    let grid = ctx.cfg.grid.build()?;
    let inference = ctx.cfg.inference.build()?;
    let index = load_head_index(heads_dir)?;
    let records: Vec<SceneDetections> = ctx.with_pool(|| {
        index
            .par_iter()
            .map(|entry| {
                let head = read_head(&heads_dir.join(&entry.file))?;
                let candidates = extract_candidates(&head, &inference, &grid)?;
                Ok(SceneDetections {
                    id: entry.id,
                    detections: rotated_nms(&candidates, inference.nms_iou_threshold),
                })
            })
            .collect()
    })?;
    std::fs::create_dir_all(&ctx.output_dir)?;
    let path = ctx.output_dir.join("detections.jsonl");
    write_jsonl(&path, DETECTIONS_SCHEMA, 1, &records)?;
    ctx.echo_config()?;
    let total: usize = records.iter().map(|r| r.detections.len()).sum();
    println!(
        "detect: {} detections over {} scenes -> {}",
        total,
        records.len(),
        path.display()
    );
    Ok(())
}

pub fn cmd_eval(ctx: &Ctx, scenes_dir: &Path, detections_file: &Path) -> Result<()> {
    let scenes = load_scenes(ctx, scenes_dir)?;
    let records: Vec<SceneDetections> = read_jsonl(detections_file, DETECTIONS_SCHEMA, 1)
        .with_context(|| format!("reading detections {}", detections_file.display()))?;
    for r in &records {
        if !scenes.iter().any(|s| s.id == r.id) {
            bail!("detections reference scene {} which is not in {}", r.id, scenes_dir.display());
        }
    }
    // Scenes without a detection record evaluate with zero detections.
    let joined: Vec<_> = scenes
        .iter()
        .map(|s| {
            let dets = records
                .iter()
                .find(|r| r.id == s.id)
                .map(|r| r.detections.clone())
                .unwrap_or_default();
            (dets, s.gts.clone())
        })
        .collect();
    let eval_cfg = ctx.cfg.eval.build()?;
    let report = evaluate_scenes(&joined, ctx.cfg.num_classes(), &eval_cfg)?;

    let mut rows = Vec::new();
    for m in &report.per_class {
        rows.push(EvalRow::ClassAp {
            class_id: m.class_id,
            class_name: ctx.cfg.class_name(m.class_id),
            num_gt: m.num_gt,
            num_detections: m.num_detections,
            true_positives: m.true_positives,
            ap40: m.ap40,
        });
    }
    for b in &report.recall_buckets {
        rows.push(EvalRow::BucketRecall {
            min: b.bucket.min,
            max: b.bucket.max,
            num_gt: b.num_gt,
            matched: b.matched,
            recall: b.recall,
        });
    }
    std::fs::create_dir_all(&ctx.output_dir)?;
    let path = ctx.output_dir.join("eval_report.jsonl");
    write_jsonl(&path, EVAL_SCHEMA, 1, &rows)?;
    ctx.echo_config()?;

    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    for m in &report.per_class {
        println!(
            "class={} num_gt={} num_det={} tp={} ap40={}",
            ctx.cfg.class_name(m.class_id),
            m.num_gt,
            m.num_detections,
            m.true_positives,
            fmt(m.ap40)
        );
    }
    for b in &report.recall_buckets {
        println!(
            "bucket={} num_gt={} matched={} recall={}",
            b.bucket.label(),
            b.num_gt,
            b.matched,
            fmt(b.recall)
        );
    }
    println!("eval: {} scenes -> {}", scenes.len(), path.display());
    Ok(())
}

pub fn cmd_oracle_check(ctx: &Ctx, full: bool) -> Result<()> {
    let scale = if full { OracleScale::Full } else { OracleScale::Quick };
    let outcomes = run_all(scale, ctx.cfg.seed);
    std::fs::create_dir_all(&ctx.output_dir)?;
    let path = ctx.output_dir.join("oracle_report.jsonl");
    write_jsonl(&path, ORACLE_SCHEMA, 1, &outcomes)?;
    ctx.echo_config()?;
    for o in &outcomes {
        println!("{}", o.line());
    }
    println!("oracle report -> {}", path.display());
    let failed: Vec<&str> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| o.name.as_str())
        .collect();
    if !failed.is_empty() {
        bail!("oracle suites failed: {}", failed.join(", "));
    }
    Ok(())
}
