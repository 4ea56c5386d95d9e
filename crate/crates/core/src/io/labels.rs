//! Ground-truth label files.
//!
//! The native format is sensor-frame text, one object per line:
//!
//! ```text
//! class_id cx cy cz l w h yaw [num_points]
//! ```
//!
//! with x forward, y left, z up, yaw counter-clockwise from +x and
//! (cx, cy, cz) the box centroid. KITTI camera-frame labels are supported
//! through a converter so the geometry stays convention-free: camera x
//! right, y down, z forward, `rotation_y` about the camera y axis, box
//! position at the bottom face center.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::assignment::GroundTruth;
use crate::geometry::{normalize_yaw, Box3D};
use crate::{Error, Result};

/// Rigid calibration taking sensor coordinates to rectified camera
/// coordinates: `cam = R0 * (R * velo + t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KittiCalib {
    pub r0_rect: [[f64; 3]; 3],
    pub tr_velo_to_cam_rot: [[f64; 3]; 3],
    pub tr_velo_to_cam_t: [f64; 3],
}

impl KittiCalib {
    /// Parses the `R0_rect` and `Tr_velo_to_cam` rows of a KITTI calib
    /// file; other rows are ignored.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut r0 = None;
        let mut tr = None;
        for line in text.lines() {
            let Some((key, rest)) = line.split_once(':') else {
                continue;
            };
            let values: std::result::Result<Vec<f64>, _> =
                rest.split_whitespace().map(str::parse).collect();
            match (key.trim(), values) {
                ("R0_rect", Ok(v)) if v.len() == 9 => {
                    r0 = Some([
                        [v[0], v[1], v[2]],
                        [v[3], v[4], v[5]],
                        [v[6], v[7], v[8]],
                    ]);
                }
                ("Tr_velo_to_cam", Ok(v)) if v.len() == 12 => {
                    tr = Some((
                        [
                            [v[0], v[1], v[2]],
                            [v[4], v[5], v[6]],
                            [v[8], v[9], v[10]],
                        ],
                        [v[3], v[7], v[11]],
                    ));
                }
                _ => {}
            }
        }
        match (r0, tr) {
            (Some(r0_rect), Some((rot, t))) => Ok(KittiCalib {
                r0_rect,
                tr_velo_to_cam_rot: rot,
                tr_velo_to_cam_t: t,
            }),
            _ => Err(Error::malformed(
                path.display().to_string(),
                "missing R0_rect or Tr_velo_to_cam row",
            )),
        }
    }

    /// Maps a rectified-camera point into the sensor frame:
    /// `velo = R^T (R0^T cam - t)`.
    fn cam_to_velo(&self, cam: [f64; 3]) -> [f64; 3] {
        let unrect = mat_t_vec(&self.r0_rect, cam);
        let shifted = [
            unrect[0] - self.tr_velo_to_cam_t[0],
            unrect[1] - self.tr_velo_to_cam_t[1],
            unrect[2] - self.tr_velo_to_cam_t[2],
        ];
        mat_t_vec(&self.tr_velo_to_cam_rot, shifted)
    }

    /// Rotates a rectified-camera direction into the sensor frame.
    fn cam_dir_to_velo(&self, dir: [f64; 3]) -> [f64; 3] {
        mat_t_vec(&self.tr_velo_to_cam_rot, mat_t_vec(&self.r0_rect, dir))
    }
}

fn mat_t_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    // Transpose-multiply; the rotations are orthonormal so this inverts.
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

fn parse_field<T: std::str::FromStr>(
    field: Option<&str>,
    line_no: usize,
    what: &str,
) -> std::result::Result<T, String> {
    field
        .ok_or_else(|| format!("line {line_no}: missing {what}"))?
        .parse()
        .map_err(|_| format!("line {line_no}: invalid {what}"))
}

/// Reads sensor-frame labels. The trailing point count is optional and
/// defaults to zero.
pub fn read_labels_sensor(path: impl AsRef<Path>) -> Result<Vec<GroundTruth>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_labels_sensor(&text).map_err(|reason| Error::malformed(path.display().to_string(), reason))
}

pub fn parse_labels_sensor(text: &str) -> std::result::Result<Vec<GroundTruth>, String> {
    let mut gts = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let class_id: u32 = parse_field(fields.next(), line_no, "class_id")?;
        let mut f = |what: &str| parse_field::<f64>(fields.next(), line_no, what);
        let (cx, cy, cz) = (f("cx")?, f("cy")?, f("cz")?);
        let (l, w, h) = (f("l")?, f("w")?, f("h")?);
        let yaw = f("yaw")?;
        let num_points: u32 = match fields.next() {
            Some(v) => v
                .parse()
                .map_err(|_| format!("line {line_no}: invalid num_points"))?,
            None => 0,
        };
        if fields.next().is_some() {
            return Err(format!("line {line_no}: trailing fields"));
        }
        let box3d = Box3D::new(cx, cy, cz, l, w, h, yaw)
            .map_err(|e| format!("line {line_no}: {e}"))?;
        gts.push(GroundTruth::new(class_id, box3d, num_points));
    }
    Ok(gts)
}

pub fn format_labels_sensor(gts: &[GroundTruth]) -> String {
    let mut out = String::new();
    for gt in gts {
        let b = &gt.box3d;
        writeln!(
            out,
            "{} {} {} {} {} {} {} {} {}",
            gt.class_id, b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw, gt.num_points
        )
        .expect("string write");
    }
    out
}

pub fn write_labels_sensor(path: impl AsRef<Path>, gts: &[GroundTruth]) -> Result<()> {
    fs::write(path, format_labels_sensor(gts))?;
    Ok(())
}

/// Reads KITTI camera-frame labels (`type truncated occluded alpha bbox*4
/// h w l x y z rotation_y [score]`). Types are matched case-insensitively
/// against `class_names`; unknown types (DontCare among them) are
/// skipped. Without calibration the idealized axis swap is applied; with
/// it, the full rigid transform.
pub fn read_labels_kitti(
    path: impl AsRef<Path>,
    calib: Option<&KittiCalib>,
    class_names: &[String],
) -> Result<Vec<GroundTruth>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_labels_kitti(&text, calib, class_names)
        .map_err(|reason| Error::malformed(path.display().to_string(), reason))
}

pub fn parse_labels_kitti(
    text: &str,
    calib: Option<&KittiCalib>,
    class_names: &[String],
) -> std::result::Result<Vec<GroundTruth>, String> {
    let mut gts = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 15 {
            return Err(format!(
                "line {line_no}: expected at least 15 fields, got {}",
                fields.len()
            ));
        }
        let kind = fields[0];
        let Some(class_id) = class_names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(kind))
        else {
            continue;
        };
        let mut values = [0.0f64; 7];
        for (v, field) in values.iter_mut().zip(&fields[8..15]) {
            *v = field
                .parse()
                .map_err(|_| format!("line {line_no}: invalid number {field:?}"))?;
        }
        let [h, w, l, x, y, z, ry] = values;
        // Bottom-face center to centroid happens in camera coordinates,
        // where y points down.
        let center_cam = [x, y - h / 2.0, z];
        let (center, yaw) = match calib {
            None => {
                // Idealized mounting: camera z is sensor x, camera x is
                // sensor -y, camera y is sensor -z.
                (
                    [center_cam[2], -center_cam[0], -center_cam[1]],
                    normalize_yaw(-ry - std::f64::consts::FRAC_PI_2),
                )
            }
            Some(calib) => {
                let center = calib.cam_to_velo(center_cam);
                let dir = calib.cam_dir_to_velo([ry.cos(), 0.0, -ry.sin()]);
                (center, normalize_yaw(dir[1].atan2(dir[0])))
            }
        };
        let box3d = Box3D::new(center[0], center[1], center[2], l, w, h, yaw)
            .map_err(|e| format!("line {line_no}: {e}"))?;
        gts.push(GroundTruth::new(class_id as u32, box3d, 0));
    }
    Ok(gts)
}
