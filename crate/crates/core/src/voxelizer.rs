//! Point binning into the input voxel grid and projection to the
//! backbone-output BEV occupancy map.
//!
//! Grid conventions: the input grid has `nx x ny x nz` voxels; the BEV
//! output grid is `rows x cols = (ny / downsample) x (nx / downsample)`,
//! so row index i runs along y and column index j along x.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Point3;
use crate::{derive_seed, Error, Result};

/// Relative slack when checking that a range is an integral number of
/// voxels; absorbs decimal ranges like 70.4 / 0.025.
const RANGE_DIVISIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub z_range: (f64, f64),
    pub voxel_size: (f64, f64, f64),
    pub max_points_per_voxel: usize,
    pub downsample: usize,
}

impl GridConfig {
    pub fn new(
        x_range: (f64, f64),
        y_range: (f64, f64),
        z_range: (f64, f64),
        voxel_size: (f64, f64, f64),
        max_points_per_voxel: usize,
        downsample: usize,
    ) -> Result<Self> {
        let cfg = GridConfig {
            x_range,
            y_range,
            z_range,
            voxel_size,
            max_points_per_voxel,
            downsample,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// KITTI car-range defaults: x [0, 70.4], y [-40, 40], z [-3, 1],
    /// voxels (0.025, 0.025, 0.05) m, 5 points per voxel, stride-8 BEV.
    pub fn kitti() -> Self {
        GridConfig {
            x_range: (0.0, 70.4),
            y_range: (-40.0, 40.0),
            z_range: (-3.0, 1.0),
            voxel_size: (0.025, 0.025, 0.05),
            max_points_per_voxel: 5,
            downsample: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("x", self.x_range),
            ("y", self.y_range),
            ("z", self.z_range),
        ] {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::invalid_config(format!(
                    "{name}_range must be a finite nonempty interval, got ({lo}, {hi})"
                )));
            }
        }
        let (vx, vy, vz) = self.voxel_size;
        if !(vx > 0.0 && vy > 0.0 && vz > 0.0) {
            return Err(Error::invalid_config(format!(
                "voxel_size components must be positive, got {:?}",
                self.voxel_size
            )));
        }
        if self.max_points_per_voxel == 0 {
            return Err(Error::invalid_config("max_points_per_voxel must be >= 1"));
        }
        if self.downsample == 0 {
            return Err(Error::invalid_config("downsample must be >= 1"));
        }
        for (name, (lo, hi), size) in [
            ("x", self.x_range, vx),
            ("y", self.y_range, vy),
            ("z", self.z_range, vz),
        ] {
            axis_count(name, lo, hi, size)?;
        }
        let (nx, ny, _) = self.input_dims();
        if nx % self.downsample != 0 || ny % self.downsample != 0 {
            return Err(Error::invalid_config(format!(
                "downsample {} must divide the BEV grid dims ({nx}, {ny})",
                self.downsample
            )));
        }
        Ok(())
    }

    /// Voxel counts along (x, y, z).
    pub fn input_dims(&self) -> (usize, usize, usize) {
        let (vx, vy, vz) = self.voxel_size;
        (
            ((self.x_range.1 - self.x_range.0) / vx).round() as usize,
            ((self.y_range.1 - self.y_range.0) / vy).round() as usize,
            ((self.z_range.1 - self.z_range.0) / vz).round() as usize,
        )
    }

    /// BEV output grid shape as (rows, cols); rows run along y.
    pub fn output_dims(&self) -> (usize, usize) {
        let (nx, ny, _) = self.input_dims();
        (ny / self.downsample, nx / self.downsample)
    }

    /// Center of BEV output cell (i, j) in meters.
    pub fn cell_center(&self, i: usize, j: usize) -> Result<(f64, f64)> {
        let (rows, cols) = self.output_dims();
        if i >= rows || j >= cols {
            return Err(Error::IndexOutOfBounds(format!(
                "cell ({i}, {j}) outside BEV grid {rows}x{cols}"
            )));
        }
        let x = (j as f64 + 0.5) / cols as f64 * (self.x_range.1 - self.x_range.0) + self.x_range.0;
        let y = (i as f64 + 0.5) / rows as f64 * (self.y_range.1 - self.y_range.0) + self.y_range.0;
        Ok((x, y))
    }

    /// Input voxel index for a point, or None when out of range. Interior
    /// voxel boundaries belong to the higher-index voxel; the global max
    /// edge belongs to the last voxel.
    pub fn voxel_index(&self, p: &Point3) -> Option<(usize, usize, usize)> {
        let (nx, ny, nz) = self.input_dims();
        let ix = axis_index(p.x, self.x_range, self.voxel_size.0, nx)?;
        let iy = axis_index(p.y, self.y_range, self.voxel_size.1, ny)?;
        let iz = axis_index(p.z, self.z_range, self.voxel_size.2, nz)?;
        Some((ix, iy, iz))
    }
}

fn axis_count(name: &str, lo: f64, hi: f64, size: f64) -> Result<usize> {
    let exact = (hi - lo) / size;
    let n = exact.round();
    if n < 1.0 || (exact - n).abs() > RANGE_DIVISIBILITY_TOL * n.max(1.0) {
        return Err(Error::invalid_config(format!(
            "{name}_range ({lo}, {hi}) is not an integral number of {size} m voxels"
        )));
    }
    Ok(n as usize)
}

fn axis_index(v: f64, (lo, hi): (f64, f64), size: f64, n: usize) -> Option<usize> {
    if !v.is_finite() || v < lo || v > hi {
        return None;
    }
    let idx = ((v - lo) / size).floor() as usize;
    Some(idx.min(n - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Voxel {
    /// Number of retained points (after downsampling to max_points_per_voxel).
    pub count: usize,
    /// Mean (x, y, z, intensity) of the retained points.
    pub feature: [f64; 4],
}

/// Sparse voxel grid keyed by (ix, iy, iz); iteration order is the
/// deterministic key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VoxelGrid {
    voxels: BTreeMap<(usize, usize, usize), Voxel>,
}

impl VoxelGrid {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn get(&self, index: (usize, usize, usize)) -> Option<&Voxel> {
        self.voxels.get(&index)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize, usize), &Voxel)> {
        self.voxels.iter()
    }
}

/// Bins points into voxels, keeping at most `max_points_per_voxel` per
/// voxel via a seeded Fisher-Yates selection, and averages the survivors
/// into the voxel feature. Out-of-range points are dropped.
///
/// Points are put into a canonical order inside each voxel before
/// sampling and averaging, so the result is bit-identical under any
/// permutation of the input.
pub fn voxelize(points: &[Point3], config: &GridConfig, seed: u64) -> VoxelGrid {
    debug_assert!(config.validate().is_ok());
    let mut bins: BTreeMap<(usize, usize, usize), Vec<Point3>> = BTreeMap::new();
    for p in points {
        if let Some(idx) = config.voxel_index(p) {
            bins.entry(idx).or_default().push(*p);
        }
    }
    let max = config.max_points_per_voxel;
    let mut voxels = BTreeMap::new();
    for (idx, mut pts) in bins {
        pts.sort_by(|a, b| {
            a.x.total_cmp(&b.x)
                .then(a.y.total_cmp(&b.y))
                .then(a.z.total_cmp(&b.z))
                .then(a.intensity.total_cmp(&b.intensity))
        });
        if pts.len() > max {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, &[idx.0 as u64, idx.1 as u64, idx.2 as u64]));
            for k in 0..max {
                let swap = rng.random_range(k..pts.len());
                pts.swap(k, swap);
            }
            pts.truncate(max);
        }
        let inv = 1.0 / pts.len() as f64;
        let mut feature = [0.0; 4];
        for p in &pts {
            feature[0] += p.x;
            feature[1] += p.y;
            feature[2] += p.z;
            feature[3] += p.intensity;
        }
        for f in &mut feature {
            *f *= inv;
        }
        voxels.insert(
            idx,
            Voxel {
                count: pts.len(),
                feature,
            },
        );
    }
    VoxelGrid { voxels }
}

/// BEV occupancy of the downsampled output grid: cell (i, j) is occupied
/// iff any voxel in its downsample x downsample column holds a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    rows: usize,
    cols: usize,
    counts: Vec<usize>,
}

impl OccupancyGrid {
    pub fn empty(rows: usize, cols: usize) -> Self {
        OccupancyGrid {
            rows,
            cols,
            counts: vec![0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn count(&self, i: usize, j: usize) -> usize {
        self.counts[i * self.cols + j]
    }

    pub fn occupied(&self, i: usize, j: usize) -> bool {
        self.count(i, j) > 0
    }

    pub fn add(&mut self, i: usize, j: usize, count: usize) {
        self.counts[i * self.cols + j] += count;
    }

    /// Occupied cells in row-major order.
    pub fn iter_occupied(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows)
            .flat_map(move |i| (0..self.cols).map(move |j| (i, j)))
            .filter(move |&(i, j)| self.occupied(i, j))
    }
}

pub fn bev_occupancy(grid: &VoxelGrid, config: &GridConfig) -> OccupancyGrid {
    let (rows, cols) = config.output_dims();
    let mut occ = OccupancyGrid::empty(rows, cols);
    for (&(ix, iy, _iz), voxel) in grid.iter() {
        occ.add(iy / config.downsample, ix / config.downsample, voxel.count);
    }
    occ
}
