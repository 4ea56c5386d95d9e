//! On-disk formats and the synthetic scene generator.
//!
//! - [`points`]: packed binary point clouds (little-endian f32 quadruples).
//! - [`labels`]: text ground-truth labels, sensor frame or KITTI camera
//!   frame with the documented conversion.
//! - [`synth`]: seeded synthetic scene generation.
//! - [`report`]: line-delimited JSON records behind a schema header.
//! - [`head_file`]: dense head tensors with a self-describing header.
//! - [`scenes`]: scene-bundle directories (points + labels + index).

pub mod head_file;
pub mod labels;
pub mod points;
pub mod report;
pub mod scenes;
pub mod synth;

pub use head_file::{read_head, write_head};
pub use labels::{read_labels_kitti, read_labels_sensor, write_labels_sensor, KittiCalib};
pub use points::{read_point_bin, write_point_bin};
pub use report::{read_jsonl, write_jsonl};
pub use scenes::{read_scene_dir, write_scene_dir, SceneIndexEntry};
pub use synth::{synth_scene, ClassTemplate, PointDensity, SceneBundle, SynthSpec};
