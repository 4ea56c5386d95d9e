//! Scene directory layout: one point binary and one sensor-frame label
//! file per scene, plus a JSONL index listing every scene with its seed
//! and file names. The index is the source of truth for which scenes a
//! directory contains and in what order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::labels::{read_labels_sensor, write_labels_sensor};
use super::points::{read_point_bin, write_point_bin};
use super::report::{read_jsonl, write_jsonl};
use super::synth::SceneBundle;
use crate::Result;

pub const SCENE_INDEX_SCHEMA: &str = "scene_index";
pub const SCENE_INDEX_VERSION: u32 = 1;
pub const SCENE_INDEX_FILE: &str = "index.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneIndexEntry {
    pub id: u64,
    pub seed: u64,
    pub points_file: String,
    pub labels_file: String,
    pub num_points: usize,
    pub num_gts: usize,
}

fn points_name(id: u64) -> String {
    format!("scene_{id:06}.bin")
}

fn labels_name(id: u64) -> String {
    format!("scene_{id:06}.txt")
}

pub fn index_path(dir: &Path) -> PathBuf {
    dir.join(SCENE_INDEX_FILE)
}

/// Writes every scene plus the index. The directory is created if
/// missing; existing files with the same names are overwritten.
pub fn write_scene_dir(dir: &Path, scenes: &[SceneBundle]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut index = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let entry = SceneIndexEntry {
            id: scene.id,
            seed: scene.seed,
            points_file: points_name(scene.id),
            labels_file: labels_name(scene.id),
            num_points: scene.points.len(),
            num_gts: scene.gts.len(),
        };
        write_point_bin(dir.join(&entry.points_file), &scene.points)?;
        write_labels_sensor(dir.join(&entry.labels_file), &scene.gts)?;
        index.push(entry);
    }
    write_jsonl(
        &index_path(dir),
        SCENE_INDEX_SCHEMA,
        SCENE_INDEX_VERSION,
        &index,
    )
}

pub fn read_scene_index(dir: &Path) -> Result<Vec<SceneIndexEntry>> {
    read_jsonl(&index_path(dir), SCENE_INDEX_SCHEMA, SCENE_INDEX_VERSION)
}

/// Loads one indexed scene.
pub fn read_scene(dir: &Path, entry: &SceneIndexEntry) -> Result<SceneBundle> {
    Ok(SceneBundle {
        id: entry.id,
        seed: entry.seed,
        points: read_point_bin(dir.join(&entry.points_file))?,
        gts: read_labels_sensor(dir.join(&entry.labels_file))?,
    })
}

/// Loads every scene listed in the directory index, in index order.
pub fn read_scene_dir(dir: &Path) -> Result<Vec<SceneBundle>> {
    read_scene_index(dir)?
        .iter()
        .map(|e| read_scene(dir, e))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synth::{synth_scene, SynthSpec};
    use crate::voxelizer::GridConfig;

    fn scenes() -> Vec<SceneBundle> {
        let grid =
            GridConfig::new((0.0, 25.6), (-12.8, 12.8), (-3.0, 1.0), (0.1, 0.1, 0.2), 5, 4)
                .unwrap();
        (0..3)
            .map(|i| synth_scene(&SynthSpec::default(), &grid, i, 100 + i).unwrap())
            .collect()
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let original = scenes();
        write_scene_dir(dir.path(), &original).unwrap();
        let back = read_scene_dir(dir.path()).unwrap();
        assert_eq!(back, original);
    }

    #[test]
    fn index_lists_every_scene() {
        let dir = tempfile::tempdir().unwrap();
        let original = scenes();
        write_scene_dir(dir.path(), &original).unwrap();
        let index = read_scene_index(dir.path()).unwrap();
        assert_eq!(index.len(), original.len());
        for (entry, scene) in index.iter().zip(&original) {
            assert_eq!(entry.id, scene.id);
            assert_eq!(entry.num_points, scene.points.len());
            assert_eq!(entry.num_gts, scene.gts.len());
            assert!(dir.path().join(&entry.points_file).exists());
            assert!(dir.path().join(&entry.labels_file).exists());
        }
    }

    #[test]
    fn missing_index_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_scene_dir(dir.path()).is_err());
    }
}
