//! Oriented boxes, yaw-only vehicle poses and rotated-box IoU.
//!
//! Every object in the system is an [`ObjectState`]: a class id, a 3D center,
//! extents along the box's own length/width/height axes, and a yaw about +z.
//! Poses are planar rigid transforms (translation plus heading), which is all a
//! ground vehicle needs.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

pub type Vec3 = [f64; 3];
pub type Point2 = [f64; 2];

/// Areas below this are treated as degenerate footprints.
const DEGENERATE_AREA: f64 = 1e-12;

/// Wraps an angle into the half-open interval `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    if (-PI..PI).contains(&a) {
        return a;
    }
    let mut w = a - TAU * ((a + PI) / TAU).floor();
    if w >= PI {
        w -= TAU;
    }
    if w < -PI {
        w += TAU;
    }
    w
}

/// Signed smallest rotation taking `b` onto `a`, in `[-π, π)`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// One object: class id, center (m), extents `(l, w, h)` (m) and yaw (rad).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub category: u16,
    pub center: Vec3,
    pub extents: Vec3,
    pub yaw: f64,
}

impl ObjectState {
    pub fn new(category: u16, center: Vec3, extents: Vec3, yaw: f64) -> Self {
        Self {
            category,
            center,
            extents,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.extents.iter().all(|e| e.is_finite() && *e > 0.0)
            && self.center.iter().all(|c| c.is_finite())
            && self.yaw.is_finite()
            && (-PI..PI).contains(&self.yaw)
    }

    pub fn length(&self) -> f64 {
        self.extents[0]
    }

    pub fn width(&self) -> f64 {
        self.extents[1]
    }

    pub fn height(&self) -> f64 {
        self.extents[2]
    }

    /// Planar distance between the two centers.
    pub fn planar_distance(&self, other: &ObjectState) -> f64 {
        (self.center[0] - other.center[0]).hypot(self.center[1] - other.center[1])
    }

    /// Footprint corners in counter-clockwise order.
    pub fn footprint(&self) -> [Point2; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = 0.5 * self.extents[0];
        let hw = 0.5 * self.extents[1];
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[x, y]| [self.center[0] + c * x - s * y, self.center[1] + s * x + c * y])
    }

    pub fn footprint_area(&self) -> f64 {
        self.extents[0] * self.extents[1]
    }

    pub fn volume(&self) -> f64 {
        self.extents[0] * self.extents[1] * self.extents[2]
    }

    /// Vertical span `[bottom, top]`.
    pub fn z_range(&self) -> (f64, f64) {
        let half = 0.5 * self.extents[2];
        (self.center[2] - half, self.center[2] + half)
    }

    /// True when `p` lies inside (or on) the footprint rectangle.
    pub fn footprint_contains(&self, p: Point2) -> bool {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let (s, c) = self.yaw.sin_cos();
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        lx.abs() <= 0.5 * self.extents[0] && ly.abs() <= 0.5 * self.extents[1]
    }
}

/// Planar rigid transform of a vehicle: position plus heading about +z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub heading: f64,
}

impl Default for Pose {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        position: [0.0; 3],
        heading: 0.0,
    };

    pub fn new(position: Vec3, heading: f64) -> Self {
        Self {
            position,
            heading: wrap_angle(heading),
        }
    }

    /// Maps a point from this pose's local frame into the world frame.
    pub fn point_to_global(&self, p: Vec3) -> Vec3 {
        let (s, c) = self.heading.sin_cos();
        [
            c * p[0] - s * p[1] + self.position[0],
            s * p[0] + c * p[1] + self.position[1],
            p[2] + self.position[2],
        ]
    }

    /// Maps a world-frame point into this pose's local frame.
    pub fn point_to_local(&self, p: Vec3) -> Vec3 {
        let (s, c) = self.heading.sin_cos();
        let dx = p[0] - self.position[0];
        let dy = p[1] - self.position[1];
        [c * dx + s * dy, -s * dx + c * dy, p[2] - self.position[2]]
    }

    pub fn to_global(&self, obj: &ObjectState) -> ObjectState {
        ObjectState {
            category: obj.category,
            center: self.point_to_global(obj.center),
            extents: obj.extents,
            yaw: wrap_angle(obj.yaw + self.heading),
        }
    }

    pub fn to_local(&self, obj: &ObjectState) -> ObjectState {
        ObjectState {
            category: obj.category,
            center: self.point_to_local(obj.center),
            extents: obj.extents,
            yaw: wrap_angle(obj.yaw - self.heading),
        }
    }

    /// Composition `self ∘ inner`: first `inner`, then `self`.
    pub fn compose(&self, inner: &Pose) -> Pose {
        Pose::new(self.point_to_global(inner.position), self.heading + inner.heading)
    }
}

/// Local → global map of an object (`F_{L→G}`).
pub fn transform_to_global(obj: &ObjectState, pose: &Pose) -> ObjectState {
    pose.to_global(obj)
}

/// Global → local map of an object (`F_{G→L}`).
pub fn transform_to_local(obj: &ObjectState, pose: &Pose) -> ObjectState {
    pose.to_local(obj)
}

/// Shoelace area of a simple polygon (positive for counter-clockwise order).
pub fn polygon_area(poly: &[Point2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * acc
}

/// Clips `subject` against the convex counter-clockwise polygon `clip`
/// (Sutherland–Hodgman). The result is the intersection polygon, possibly empty.
pub fn clip_convex(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut output: Vec<Point2> = subject.to_vec();
    let mut input = Vec::with_capacity(8);
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        std::mem::swap(&mut input, &mut output);
        output.clear();
        let side = |p: Point2| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let s_cur = side(cur);
            let s_prev = side(prev);
            if s_cur >= 0.0 {
                if s_prev < 0.0 {
                    output.push(edge_cross(prev, cur, s_prev, s_cur));
                }
                output.push(cur);
            } else if s_prev >= 0.0 {
                output.push(edge_cross(prev, cur, s_prev, s_cur));
            }
        }
    }
    output
}

fn edge_cross(p: Point2, q: Point2, sp: f64, sq: f64) -> Point2 {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Area of the intersection of the two yaw-rotated footprints.
pub fn bev_intersection_area(a: &ObjectState, b: &ObjectState) -> f64 {
    let reach = 0.5 * (a.extents[0].hypot(a.extents[1]) + b.extents[0].hypot(b.extents[1]));
    if a.planar_distance(b) > reach {
        return 0.0;
    }
    polygon_area(&clip_convex(&a.footprint(), &b.footprint())).max(0.0)
}

/// Bird's-eye-view IoU of the two rotated footprint rectangles.
///
/// Degenerate (near zero area) footprints yield 0.
pub fn iou_bev(a: &ObjectState, b: &ObjectState) -> f64 {
    let area_a = a.footprint_area();
    let area_b = b.footprint_area();
    if !(area_a > DEGENERATE_AREA && area_b > DEGENERATE_AREA) {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b);
    let union = area_a + area_b - inter;
    if union <= DEGENERATE_AREA {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Volumetric IoU: BEV intersection times vertical overlap over volume union.
pub fn iou_3d(a: &ObjectState, b: &ObjectState) -> f64 {
    let vol_a = a.volume();
    let vol_b = b.volume();
    if !(vol_a > DEGENERATE_AREA && vol_b > DEGENERATE_AREA) {
        return 0.0;
    }
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    let dz = (a1.min(b1) - a0.max(b0)).max(0.0);
    if dz == 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dz;
    let union = vol_a + vol_b - inter;
    if union <= DEGENERATE_AREA {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Which overlap measure pruning and evaluation use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouKind {
    #[default]
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

impl IouKind {
    pub fn iou(self, a: &ObjectState, b: &ObjectState) -> f64 {
        match self {
            IouKind::Bev => iou_bev(a, b),
            IouKind::ThreeD => iou_3d(a, b),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn unit_box(x: f64, y: f64, yaw: f64) -> ObjectState {
        ObjectState::new(0, [x, y, 0.5], [1.0, 1.0, 1.0], yaw)
    }

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(-PI), -PI);
        assert!((wrap_angle(3.0 * PI) + PI).abs() < 1e-12);
        assert!((wrap_angle(0.25) - 0.25).abs() < 1e-15);
        assert!((wrap_angle(TAU + 0.25) - 0.25).abs() < 1e-12);
        for i in -50..50 {
            let w = wrap_angle(i as f64 * 0.77);
            assert!((-PI..PI).contains(&w));
        }
    }

    #[test]
    fn identity_pose_is_identity() {
        let o = ObjectState::new(2, [3.0, -1.0, 0.7], [4.0, 2.0, 1.5], 0.3);
        assert_eq!(transform_to_global(&o, &Pose::IDENTITY), o);
        assert_eq!(transform_to_local(&o, &Pose::IDENTITY), o);
    }

    #[test]
    fn pure_translation() {
        let o = unit_box(0.0, 0.0, 0.0);
        let p = Pose::new([1.0, 0.0, 0.0], 0.0);
        let g = transform_to_global(&o, &p);
        assert!(close(g.center, [1.0, 0.0, 0.5], 1e-15));
    }

    #[test]
    fn quarter_turn_rotation() {
        // R(π/2)·(1,0) = (0,1) by the 2x2 rotation matrix [[0,-1],[1,0]].
        let o = ObjectState::new(0, [1.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0);
        let p = Pose::new([0.0; 3], FRAC_PI_2);
        let g = transform_to_global(&o, &p);
        assert!(close(g.center, [0.0, 1.0, 0.0], 1e-12));
        assert!((g.yaw - FRAC_PI_2).abs() < 1e-12);

        let back = transform_to_local(&ObjectState { yaw: FRAC_PI_2, ..g }, &p);
        assert!(close(back.center, [1.0, 0.0, 0.0], 1e-12));
        let l = transform_to_local(&ObjectState::new(0, [0.0, 1.0, 0.0], [1.0, 1.0, 1.0], 0.0), &p);
        assert!(close(l.center, [1.0, 0.0, 0.0], 1e-12));
    }

    #[test]
    fn iou_identical_is_one() {
        let a = ObjectState::new(0, [5.0, 2.0, 0.8], [4.5, 1.9, 1.6], 0.4);
        assert!((iou_bev(&a, &a) - 1.0).abs() < 1e-12);
        assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iou_half_offset_unit_boxes() {
        // overlap 0.5, union 1.5
        let a = unit_box(0.0, 0.0, 0.0);
        let b = unit_box(0.5, 0.0, 0.0);
        assert!((iou_bev(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn square_rotated_quarter_turn() {
        let a = ObjectState::new(0, [1.0, 1.0, 0.5], [2.0, 2.0, 1.0], 0.1);
        let b = ObjectState {
            yaw: wrap_angle(0.1 + FRAC_PI_2),
            ..a
        };
        assert!((iou_bev(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vertical_gap_gives_zero_3d() {
        let a = ObjectState::new(0, [0.0, 0.0, 0.5], [1.0, 1.0, 1.0], 0.0);
        let b = ObjectState::new(0, [0.0, 0.0, 2.6], [1.0, 1.0, 1.0], 0.0);
        assert_eq!(iou_3d(&a, &b), 0.0);
        assert!((iou_bev(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_footprint_is_zero() {
        let a = ObjectState {
            category: 0,
            center: [0.0; 3],
            extents: [1e-9, 1e-9, 1.0],
            yaw: 0.0,
        };
        assert_eq!(iou_bev(&a, &a), 0.0);
        assert_eq!(iou_3d(&a, &a), 0.0);
    }

    #[test]
    fn disjoint_boxes() {
        assert_eq!(iou_bev(&unit_box(0.0, 0.0, 0.3), &unit_box(5.0, 0.0, 0.0)), 0.0);
    }

    #[test]
    fn footprint_is_ccw_with_expected_area() {
        let a = ObjectState::new(0, [1.0, 2.0, 0.0], [4.0, 2.0, 1.0], 1.1);
        assert!((polygon_area(&a.footprint()) - 8.0).abs() < 1e-12);
        assert!(a.footprint_contains([1.0, 2.0]));
    }

    #[test]
    fn validity() {
        assert!(unit_box(0.0, 0.0, 0.0).is_valid());
        let mut bad = unit_box(0.0, 0.0, 0.0);
        bad.extents[1] = 0.0;
        assert!(!bad.is_valid());
        bad = unit_box(0.0, 0.0, 0.0);
        bad.yaw = PI;
        assert!(!bad.is_valid());
    }
}
