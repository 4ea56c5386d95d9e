//! Oriented 3D boxes, BEV polygon math and rotated IoU.
//!
//! Boxes live in the sensor frame: x forward, y left, z up, yaw measured
//! counter-clockwise from +x. The BEV footprint of a box is the rectangle
//! spanned by length (along heading) and width (across heading).

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Intersection areas below this are treated as empty; edge or corner
/// contact between footprints must not produce a positive IoU.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Point3 { x, y, z, intensity }
    }

    pub fn bev(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Oriented box: `(cx, cy, cz)` is the volumetric center, `l` extends along
/// the heading, `w` across it, `h` vertically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

impl Box3D {
    pub fn new(cx: f64, cy: f64, cz: f64, l: f64, w: f64, h: f64, yaw: f64) -> Result<Self> {
        let b = Box3D {
            cx,
            cy,
            cz,
            l,
            w,
            h,
            yaw,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_config(format!(
                "box has non-finite component: {self:?}"
            )));
        }
        if self.l <= 0.0 || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::invalid_config(format!(
                "box dimensions must be positive, got l={} w={} h={}",
                self.l, self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    pub fn bev_area(&self) -> f64 {
        self.l * self.w
    }

    pub fn z_min(&self) -> f64 {
        self.cz - self.h / 2.0
    }

    pub fn z_max(&self) -> f64 {
        self.cz + self.h / 2.0
    }
}

/// Convex BEV polygon, vertices counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BevPolygon {
    pub vertices: Vec<[f64; 2]>,
}

impl BevPolygon {
    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Shoelace area, positive for counter-clockwise winding.
    pub fn signed_area(&self) -> f64 {
        let v = &self.vertices;
        if v.len() < 3 {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..v.len() {
            let [x0, y0] = v[i];
            let [x1, y1] = v[(i + 1) % v.len()];
            acc += x0 * y1 - x1 * y0;
        }
        acc / 2.0
    }
}

/// BEV footprint corners, counter-clockwise starting at the front-left
/// corner (ahead of the center along the heading, to its left).
pub fn box_corners_bev(b: &Box3D) -> BevPolygon {
    let (s, c) = b.yaw.sin_cos();
    let hl = b.l / 2.0;
    let hw = b.w / 2.0;
    // Local (forward, left) offsets: front-left, rear-left, rear-right,
    // front-right. CCW because +y' is left of +x'.
    let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
    let vertices = local
        .iter()
        .map(|&[lx, ly]| [b.cx + c * lx - s * ly, b.cy + s * lx + c * ly])
        .collect();
    BevPolygon { vertices }
}

/// Expresses a BEV point in the box's local frame: x' along the heading,
/// y' to its left.
pub fn local_frame(p: [f64; 2], b: &Box3D) -> [f64; 2] {
    let (s, c) = b.yaw.sin_cos();
    let dx = p[0] - b.cx;
    let dy = p[1] - b.cy;
    [c * dx + s * dy, -s * dx + c * dy]
}

/// BEV containment test; boundary points count as inside.
pub fn point_in_box_bev(p: [f64; 2], b: &Box3D) -> bool {
    let [lx, ly] = local_frame(p, b);
    lx.abs() <= b.l / 2.0 && ly.abs() <= b.w / 2.0
}

/// 3D containment test; all faces count as inside.
pub fn point_in_box_3d(p: &Point3, b: &Box3D) -> bool {
    point_in_box_bev(p.bev(), b) && p.z >= b.z_min() && p.z <= b.z_max()
}

/// Clips a convex polygon against one half-plane defined by the directed
/// edge `a -> b`; keeps the side to the left of the edge.
fn clip_half_plane(subject: &[[f64; 2]], a: [f64; 2], b: [f64; 2]) -> Vec<[f64; 2]> {
    let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let mut out = Vec::with_capacity(subject.len() + 1);
    for i in 0..subject.len() {
        let cur = subject[i];
        let next = subject[(i + 1) % subject.len()];
        let sc = side(cur);
        let sn = side(next);
        if sc >= 0.0 {
            out.push(cur);
        }
        if (sc > 0.0 && sn < 0.0) || (sc < 0.0 && sn > 0.0) {
            let t = sc / (sc - sn);
            out.push([
                cur[0] + t * (next[0] - cur[0]),
                cur[1] + t * (next[1] - cur[1]),
            ]);
        }
    }
    out
}

/// Sutherland-Hodgman intersection of a convex subject polygon with a
/// convex, counter-clockwise clip polygon.
pub fn clip_convex(subject: &BevPolygon, clip: &BevPolygon) -> BevPolygon {
    let mut vertices = subject.vertices.clone();
    let cv = &clip.vertices;
    for i in 0..cv.len() {
        if vertices.is_empty() {
            break;
        }
        vertices = clip_half_plane(&vertices, cv[i], cv[(i + 1) % cv.len()]);
    }
    BevPolygon { vertices }
}

/// Rotated IoU of two box footprints in BEV. Degenerate contact (shared
/// edge or corner only) yields exactly 0.
pub fn rotated_iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let pa = box_corners_bev(a);
    let pb = box_corners_bev(b);
    let inter = clip_convex(&pa, &pb).area();
    if inter < DEGENERATE_AREA {
        return 0.0;
    }
    let union = pa.area() + pb.area() - inter;
    if union <= 0.0 {
        return 1.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Wraps an angle to `(-pi, pi]`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = yaw.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn corners_axis_aligned() {
        let b = Box3D::new(0.0, 0.0, 0.0, 4.0, 2.0, 1.0, 0.0).unwrap();
        let got = box_corners_bev(&b).vertices;
        let want = [[2.0, 1.0], [-2.0, 1.0], [-2.0, -1.0], [2.0, -1.0]];
        for (g, w) in got.iter().zip(want.iter()) {
            assert_close(g[0], w[0], 1e-12);
            assert_close(g[1], w[1], 1e-12);
        }
    }

    #[test]
    fn corners_quarter_turn() {
        let b = Box3D::new(0.0, 0.0, 0.0, 4.0, 2.0, 1.0, FRAC_PI_2).unwrap();
        let got = box_corners_bev(&b).vertices;
        let want = [[-1.0, 2.0], [-1.0, -2.0], [1.0, -2.0], [1.0, 2.0]];
        for (g, w) in got.iter().zip(want.iter()) {
            assert_close(g[0], w[0], 1e-12);
            assert_close(g[1], w[1], 1e-12);
        }
    }

    #[test]
    fn corners_are_ccw_for_any_yaw() {
        for k in 0..16 {
            let yaw = -PI + 2.0 * PI * (k as f64) / 16.0;
            let b = Box3D::new(3.0, -2.0, 0.0, 5.0, 2.0, 1.5, yaw).unwrap();
            let poly = box_corners_bev(&b);
            assert!(poly.signed_area() > 0.0);
            assert_close(poly.area(), 10.0, 1e-9);
        }
    }

    #[test]
    fn local_frame_example() {
        let b = Box3D::new(1.0, 1.0, 0.0, 2.0, 1.0, 1.0, FRAC_PI_2).unwrap();
        let [lx, ly] = local_frame([-0.5, 1.0], &b);
        assert_close(lx, 0.0, 1e-12);
        assert_close(ly, 1.5, 1e-12);
        let [lx, ly] = local_frame([1.0, 2.0], &b);
        assert_close(lx, 1.0, 1e-12);
        assert_close(ly, 0.0, 1e-12);
    }

    #[test]
    fn containment_includes_boundary() {
        let b = Box3D::new(0.0, 0.0, 0.0, 4.0, 2.0, 2.0, 0.0).unwrap();
        assert!(point_in_box_bev([2.0, 1.0], &b));
        assert!(point_in_box_bev([2.0, -1.0], &b));
        assert!(!point_in_box_bev([2.0 + 1e-9, 0.0], &b));
        assert!(point_in_box_3d(&Point3::new(0.0, 0.0, 1.0, 0.0), &b));
        assert!(!point_in_box_3d(&Point3::new(0.0, 0.0, 1.0 + 1e-9, 0.0), &b));
    }

    #[test]
    fn iou_identical_boxes_is_one() {
        let b = Box3D::new(1.0, 2.0, 0.0, 3.0, 1.5, 1.0, 0.3).unwrap();
        assert_close(rotated_iou_bev(&b, &b), 1.0, 1e-12);
    }

    #[test]
    fn iou_disjoint_and_touching_are_zero() {
        let a = Box3D::new(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0).unwrap();
        let far = Box3D::new(10.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0).unwrap();
        assert_eq!(rotated_iou_bev(&a, &far), 0.0);
        // Shares the x = 1 edge with `a`: contact but no overlap area.
        let touching = Box3D::new(2.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0).unwrap();
        assert_eq!(rotated_iou_bev(&a, &touching), 0.0);
        // Corner contact only.
        let corner = Box3D::new(2.0, 2.0, 0.0, 2.0, 2.0, 1.0, 0.0).unwrap();
        assert_eq!(rotated_iou_bev(&a, &corner), 0.0);
    }

    #[test]
    fn iou_square_rotated_45_degrees() {
        // Same-center unit squares, one rotated 45 degrees: the overlap is a
        // regular octagon and the IoU works out to sqrt(2)/2.
        let a = Box3D::new(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0).unwrap();
        let b = Box3D::new(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, FRAC_PI_4).unwrap();
        assert_close(rotated_iou_bev(&a, &b), std::f64::consts::SQRT_2 / 2.0, 1e-9);
        assert_close(rotated_iou_bev(&b, &a), rotated_iou_bev(&a, &b), 1e-15);
    }

    #[test]
    fn iou_partial_overlap_axis_aligned() {
        // 2x2 squares offset by 1 in x: overlap 1x2, union 8 - 2.
        let a = Box3D::new(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0).unwrap();
        let b = Box3D::new(1.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0).unwrap();
        assert_close(rotated_iou_bev(&a, &b), 2.0 / 6.0, 1e-12);
    }

    #[test]
    fn normalize_yaw_wraps() {
        assert_close(normalize_yaw(3.0 * PI), PI, 1e-12);
        assert_close(normalize_yaw(-PI), PI, 1e-12);
        assert_close(normalize_yaw(FRAC_PI_2 + 2.0 * PI), FRAC_PI_2, 1e-12);
        assert_close(normalize_yaw(-FRAC_PI_2), -FRAC_PI_2, 1e-12);
    }

    #[test]
    fn invalid_boxes_are_rejected() {
        assert!(Box3D::new(0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0).is_err());
        assert!(Box3D::new(0.0, 0.0, 0.0, 1.0, -1.0, 1.0, 0.0).is_err());
        assert!(Box3D::new(f64::NAN, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).is_err());
    }
}
