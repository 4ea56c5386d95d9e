//! Target assignment: selecting hotspot cells per ground-truth object and
//! labeling every BEV cell as negative, ignored or hotspot.
//!
//! A "spot" is an occupied cell whose center falls inside a box footprint.
//! Each object gets at most `M = max(1, floor(C / volume))` hotspots, the
//! spots nearest its center in BEV. Remaining in-box cells are ignored so
//! they contribute neither loss nor gradient.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::{encode_box, BoxTargets};
use crate::geometry::{local_frame, point_in_box_bev, Box3D};
use crate::voxelizer::{GridConfig, OccupancyGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Category index in `[0, num_classes)`.
    pub class_id: u32,
    pub box3d: Box3D,
    /// Number of LiDAR points on the object, used for recall bucketing.
    pub num_points: u32,
}

impl GroundTruth {
    pub fn new(class_id: u32, box3d: Box3D, num_points: u32) -> Self {
        GroundTruth {
            class_id,
            box3d,
            num_points,
        }
    }
}

/// How a hotspot's position inside its object is encoded for the
/// auxiliary spatial-relation branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationEncoding {
    None,
    LeftRight,
    FrontBack,
    Quadrant,
    EightDir,
    Deviation,
}

impl RelationEncoding {
    /// Number of head channels the encoding occupies: class count for
    /// categorical kinds, 2 for the regression pair, 0 for none.
    pub fn arity(&self) -> usize {
        match self {
            RelationEncoding::None => 0,
            RelationEncoding::LeftRight | RelationEncoding::FrontBack => 2,
            RelationEncoding::Quadrant => 4,
            RelationEncoding::EightDir => 8,
            RelationEncoding::Deviation => 2,
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(
            self,
            RelationEncoding::LeftRight
                | RelationEncoding::FrontBack
                | RelationEncoding::Quadrant
                | RelationEncoding::EightDir
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpatialRelationTarget {
    None,
    /// Active class index of a categorical encoding.
    Categorical { index: u8 },
    /// Offsets along/across the heading, normalized by box size and
    /// clamped to [-0.5, 0.5].
    Deviation { along: f64, lateral: f64 },
}

impl SpatialRelationTarget {
    /// Channel targets of length `encoding.arity()`: one-hot for
    /// categorical kinds, raw pair for deviation.
    pub fn channel_targets(&self, encoding: RelationEncoding) -> Vec<f64> {
        match self {
            SpatialRelationTarget::None => Vec::new(),
            SpatialRelationTarget::Categorical { index } => {
                let mut v = vec![0.0; encoding.arity()];
                v[*index as usize] = 1.0;
                v
            }
            SpatialRelationTarget::Deviation { along, lateral } => vec![*along, *lateral],
        }
    }
}

/// Labels the position of a cell center within a box under the requested
/// encoding. All boundary cases use `>=`, so labels are deterministic.
pub fn spatial_relation_label(
    cell_center: (f64, f64),
    b: &Box3D,
    kind: RelationEncoding,
) -> SpatialRelationTarget {
    let [lx, ly] = local_frame([cell_center.0, cell_center.1], b);
    match kind {
        RelationEncoding::None => SpatialRelationTarget::None,
        RelationEncoding::LeftRight => SpatialRelationTarget::Categorical {
            index: if ly >= 0.0 { 0 } else { 1 },
        },
        RelationEncoding::FrontBack => SpatialRelationTarget::Categorical {
            index: if lx >= 0.0 { 0 } else { 1 },
        },
        RelationEncoding::Quadrant => {
            let index = match (lx >= 0.0, ly >= 0.0) {
                (true, true) => 0,
                (false, true) => 1,
                (false, false) => 2,
                (true, false) => 3,
            };
            SpatialRelationTarget::Categorical { index }
        }
        RelationEncoding::EightDir => {
            // Octants of width pi/4 counter-clockwise from the +x' axis;
            // each octant includes its lower boundary angle.
            let mut theta = ly.atan2(lx);
            if theta < 0.0 {
                theta += 2.0 * std::f64::consts::PI;
            }
            let index = ((theta / std::f64::consts::FRAC_PI_4) as usize).min(7) as u8;
            SpatialRelationTarget::Categorical { index }
        }
        RelationEncoding::Deviation => SpatialRelationTarget::Deviation {
            along: (lx / b.l).clamp(-0.5, 0.5),
            lateral: (ly / b.w).clamp(-0.5, 0.5),
        },
    }
}

/// Upper bound on hotspots for one object: floor(C / volume), clamped to
/// at least 1 so every object with a spot gets supervision. An infinite C
/// removes the cap.
pub fn max_hotspots(gt: &GroundTruth, c: f64) -> usize {
    debug_assert!(c > 0.0);
    let m = c / gt.box3d.volume();
    if m >= usize::MAX as f64 {
        usize::MAX
    } else {
        (m.floor() as usize).max(1)
    }
}

/// Occupied cells whose center lies inside the box footprint, in
/// row-major order.
pub fn find_spots(occ: &OccupancyGrid, gt: &GroundTruth, config: &GridConfig) -> Vec<(usize, usize)> {
    occ.iter_occupied()
        .filter(|&(i, j)| {
            let (x, y) = config.cell_center(i, j).expect("occupied cell in grid");
            point_in_box_bev([x, y], &gt.box3d)
        })
        .collect()
}

/// Picks the at most `max_hotspots(gt, c)` spots nearest the object
/// center in BEV. Returned nearest-first; distance ties break by
/// (row, col).
pub fn select_hotspots(
    spots: &[(usize, usize)],
    gt: &GroundTruth,
    c: f64,
    config: &GridConfig,
) -> Vec<(usize, usize)> {
    let mut ranked: Vec<((f64, usize, usize), (usize, usize))> = spots
        .iter()
        .map(|&(i, j)| {
            let (x, y) = config.cell_center(i, j).expect("spot in grid");
            let d2 = (x - gt.box3d.cx).powi(2) + (y - gt.box3d.cy).powi(2);
            ((d2, i, j), (i, j))
        })
        .collect();
    ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances"));
    ranked.truncate(max_hotspots(gt, c));
    ranked.into_iter().map(|(_, cell)| cell).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum CellState {
    /// Outside every box: a classification negative.
    Negative,
    /// Inside some box but not selected: excluded from all losses.
    Ignored,
    /// Positive sample owned by one object.
    Hotspot { class_id: u32, object_index: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotspotTarget {
    pub object_index: u32,
    pub class_id: u32,
    pub box_targets: BoxTargets,
    pub relation: SpatialRelationTarget,
}

/// Per-cell supervision for one scene. Hotspot cells carry regression and
/// relation targets; `Negative` / `Ignored` / `Hotspot` partition the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentMap {
    rows: usize,
    cols: usize,
    num_classes: usize,
    encoding: RelationEncoding,
    states: Vec<CellState>,
    targets: BTreeMap<(usize, usize), HotspotTarget>,
}

impl AssignmentMap {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn encoding(&self) -> RelationEncoding {
        self.encoding
    }

    pub fn state(&self, i: usize, j: usize) -> CellState {
        self.states[i * self.cols + j]
    }

    pub fn target(&self, i: usize, j: usize) -> Option<&HotspotTarget> {
        self.targets.get(&(i, j))
    }

    /// Hotspot cells with their targets, row-major.
    pub fn hotspots(&self) -> impl Iterator<Item = (&(usize, usize), &HotspotTarget)> {
        self.targets.iter()
    }

    pub fn num_hotspots(&self) -> usize {
        self.targets.len()
    }

    /// Cells contributing to classification: everything not ignored.
    pub fn num_classified_cells(&self) -> usize {
        self.states
            .iter()
            .filter(|s| !matches!(s, CellState::Ignored))
            .count()
    }

    /// Hotspot count per object index.
    pub fn hotspots_per_object(&self) -> BTreeMap<u32, usize> {
        let mut counts = BTreeMap::new();
        for t in self.targets.values() {
            *counts.entry(t.object_index).or_insert(0) += 1;
        }
        counts
    }
}

/// Builds the full per-cell supervision for one scene.
///
/// A cell covered by several boxes is owned by the box with the nearest
/// center (ties to the lower object index); hotspot selection then runs
/// per object over the cells it owns. Boxes may extend beyond the grid;
/// only in-range cells are considered.
pub fn build_assignment(
    occ: &OccupancyGrid,
    gts: &[GroundTruth],
    c: f64,
    encoding: RelationEncoding,
    num_classes: usize,
    config: &GridConfig,
) -> Result<AssignmentMap> {
    if num_classes == 0 {
        return Err(Error::invalid_config("num_classes must be >= 1"));
    }
    if !(c > 0.0) {
        return Err(Error::invalid_config(format!(
            "hotspot budget C must be positive, got {c}"
        )));
    }
    for (idx, gt) in gts.iter().enumerate() {
        gt.box3d.validate()?;
        if gt.class_id as usize >= num_classes {
            return Err(Error::invalid_config(format!(
                "object {idx} has class_id {} but only {num_classes} classes are configured",
                gt.class_id
            )));
        }
    }
    let (rows, cols) = (occ.rows(), occ.cols());
    let grid_dims = config.output_dims();
    if (rows, cols) != grid_dims {
        return Err(Error::ShapeMismatch(format!(
            "occupancy {rows}x{cols} does not match grid {}x{}",
            grid_dims.0, grid_dims.1
        )));
    }

    // Pass 1: ownership. For every cell, the nearest-center box containing
    // its center (if any), plus whether any box covers it at all.
    let mut owner: Vec<Option<u32>> = vec![None; rows * cols];
    let mut covered: Vec<bool> = vec![false; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let (x, y) = config.cell_center(i, j)?;
            let mut best: Option<(f64, u32)> = None;
            for (idx, gt) in gts.iter().enumerate() {
                if !point_in_box_bev([x, y], &gt.box3d) {
                    continue;
                }
                covered[i * cols + j] = true;
                let d2 = (x - gt.box3d.cx).powi(2) + (y - gt.box3d.cy).powi(2);
                let candidate = (d2, idx as u32);
                if best.is_none_or(|b| candidate < b) {
                    best = Some(candidate);
                }
            }
            owner[i * cols + j] = best.map(|(_, idx)| idx);
        }
    }

    // Pass 2: per-object selection among the spots it owns.
    let mut states = vec![CellState::Negative; rows * cols];
    for (cell, &is_covered) in states.iter_mut().zip(covered.iter()) {
        if is_covered {
            *cell = CellState::Ignored;
        }
    }
    let mut targets = BTreeMap::new();
    for (idx, gt) in gts.iter().enumerate() {
        let owned: Vec<(usize, usize)> = occ
            .iter_occupied()
            .filter(|&(i, j)| owner[i * cols + j] == Some(idx as u32))
            .collect();
        for (i, j) in select_hotspots(&owned, gt, c, config) {
            let center = config.cell_center(i, j)?;
            states[i * cols + j] = CellState::Hotspot {
                class_id: gt.class_id,
                object_index: idx as u32,
            };
            targets.insert(
                (i, j),
                HotspotTarget {
                    object_index: idx as u32,
                    class_id: gt.class_id,
                    box_targets: encode_box(&gt.box3d, center)?,
                    relation: spatial_relation_label(center, &gt.box3d, encoding),
                },
            );
        }
    }

    Ok(AssignmentMap {
        rows,
        cols,
        num_classes,
        encoding,
        states,
        targets,
    })
}
