//! Core library for hotspot-based anchor-free 3D object detection on LiDAR
//! point clouds.
//!
//! The pipeline turns a point cloud plus ground-truth boxes into dense
//! per-cell training targets on a bird's-eye-view (BEV) grid, computes the
//! training losses with analytic gradients, decodes head outputs back into
//! detections, and scores them against ground truth:
//!
//! 1. [`voxelizer`] bins points into voxels and projects occupancy to BEV.
//! 2. [`assignment`] picks "hotspot" cells per object and labels the rest.
//! 3. [`codec`] converts boxes to/from the 8-component regression encoding,
//!    including the soft-argmin binning used for offsets.
//! 4. [`loss`] implements focal, smooth-L1 and spatial-relation losses.
//! 5. [`inference`] thresholds, decodes and NMS-filters head outputs.
//! 6. [`evaluator`] matches detections to ground truth and computes AP.
//!
//! [`io`] covers the on-disk formats (point binaries, label text files,
//! synthetic scene generation, JSONL reports, head tensors) and [`oracle`]
//! holds slow reference implementations used to cross-check the fast paths.

pub mod assignment;
pub mod codec;
pub mod error;
pub mod evaluator;
pub mod field;
pub mod geometry;
pub mod inference;
pub mod io;
pub mod loss;
pub mod oracle;
pub mod voxelizer;

pub use error::{Error, Result};
pub use field::Field;

/// Mixes a 64-bit value through the splitmix64 finalizer. Used to derive
/// independent per-voxel and per-scene RNG seeds from one run seed.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a stream seed from a base seed and a sequence of indices
/// (voxel coordinates, scene ids, ...). Order-sensitive.
pub fn derive_seed(base: u64, indices: &[u64]) -> u64 {
    let mut h = mix64(base);
    for &ix in indices {
        h = mix64(h ^ ix);
    }
    h
}
