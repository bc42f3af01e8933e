//! Range/field-of-view gating and 2D ray-cast occlusion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_diff, ObjectState, Point2, Pose};

pub const OCCLUSION_RAYS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSpec {
    pub range: f64,
    /// Full opening angle of the forward wedge.
    pub fov: f64,
    pub frame_rate: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            range: 100.0,
            fov: std::f64::consts::FRAC_PI_2,
            frame_rate: 20.0,
        }
    }
}

impl SensorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.range > 0.0) {
            return Err(Error::invalid("sensor range must be positive"));
        }
        if !(self.fov > 0.0 && self.fov <= std::f64::consts::TAU) {
            return Err(Error::invalid("sensor fov must lie in (0, 2π]"));
        }
        if !(self.frame_rate > 0.0) {
            return Err(Error::invalid("sensor frame rate must be positive"));
        }
        Ok(())
    }

    /// Whether a world point lies inside the sensing wedge of `pose`.
    pub fn covers(&self, pose: &Pose, point: Point2) -> bool {
        let dx = point[0] - pose.position[0];
        let dy = point[1] - pose.position[1];
        let d = dx.hypot(dy);
        if d > self.range {
            return false;
        }
        d == 0.0 || angle_diff(dy.atan2(dx), pose.heading).abs() <= self.fov / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibleObject {
    pub object: usize,
    pub distance: f64,
    pub occlusion: f64,
}

/// Distance along a unit ray to the nearest crossing of a convex polygon.
fn ray_hit(origin: Point2, dir: Point2, poly: &[Point2; 4]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for i in 0..4 {
        let a = poly[i];
        let b = poly[(i + 1) % 4];
        let e = [b[0] - a[0], b[1] - a[1]];
        let denom = dir[0] * e[1] - dir[1] * e[0];
        if denom.abs() < 1e-15 {
            continue;
        }
        let w = [a[0] - origin[0], a[1] - origin[1]];
        let t = (w[0] * e[1] - w[1] * e[0]) / denom;
        let u = (w[0] * dir[1] - w[1] * dir[0]) / denom;
        if t >= 0.0 && (-1e-12..=1.0 + 1e-12).contains(&u) {
            best = Some(best.map_or(t, |b: f64| b.min(t)));
        }
    }
    best
}

/// Angular interval `[lo, hi]` of a footprint relative to `reference` and the
/// nearest corner distance.
fn angular_span(origin: Point2, reference: f64, poly: &[Point2; 4]) -> (f64, f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut near = f64::INFINITY;
    for p in poly {
        let dx = p[0] - origin[0];
        let dy = p[1] - origin[1];
        let rel = angle_diff(dy.atan2(dx), reference);
        lo = lo.min(rel);
        hi = hi.max(rel);
        near = near.min(dx.hypot(dy));
    }
    (lo, hi, near)
}

/// Fraction of rays across `target`'s angular extent that hit another box
/// before reaching it.
pub fn occlusion_fraction(origin: Point2, target: &ObjectState, others: &[&ObjectState]) -> f64 {
    let dx = target.center[0] - origin[0];
    let dy = target.center[1] - origin[1];
    let bearing = dy.atan2(dx);
    let center_dist = dx.hypot(dy);
    let poly = target.footprint();
    let (lo, hi, _) = angular_span(origin, bearing, &poly);
    let far = center_dist + target.length().hypot(target.width());

    let blockers: Vec<([Point2; 4], f64, f64)> = others
        .iter()
        .filter_map(|o| {
            let fp = o.footprint();
            let (blo, bhi, near) = angular_span(origin, bearing, &fp);
            (near < far && bhi >= lo && blo <= hi).then_some((fp, blo, bhi))
        })
        .collect();
    if blockers.is_empty() {
        return 0.0;
    }

    let mut blocked = 0;
    for i in 0..OCCLUSION_RAYS {
        let rel = lo + (hi - lo) * (i as f64 + 0.5) / OCCLUSION_RAYS as f64;
        let a = bearing + rel;
        let dir = [a.cos(), a.sin()];
        let reach = ray_hit(origin, dir, &poly).unwrap_or(center_dist);
        let hit = blockers
            .iter()
            .any(|(fp, blo, bhi)| rel >= *blo && rel <= *bhi && ray_hit(origin, dir, fp).is_some_and(|t| t < reach));
        if hit {
            blocked += 1;
        }
    }
    blocked as f64 / OCCLUSION_RAYS as f64
}

/// Objects a sensor at `pose` can see: inside range and wedge, not fully
/// occluded. `exclude` drops the sensing vehicle's own box.
pub fn visible_from(pose: &Pose, objects: &[ObjectState], exclude: Option<usize>, spec: &SensorSpec) -> Vec<VisibleObject> {
    let origin = [pose.position[0], pose.position[1]];
    let candidates: Vec<usize> = (0..objects.len()).filter(|&i| Some(i) != exclude).collect();
    let mut out = Vec::new();
    for &i in &candidates {
        let o = &objects[i];
        if !spec.covers(pose, [o.center[0], o.center[1]]) {
            continue;
        }
        let distance = (o.center[0] - origin[0]).hypot(o.center[1] - origin[1]);
        let others: Vec<&ObjectState> = candidates.iter().filter(|&&j| j != i).map(|&j| &objects[j]).collect();
        let occlusion = occlusion_fraction(origin, o, &others);
        if occlusion >= 1.0 {
            continue;
        }
        out.push(VisibleObject {
            object: i,
            distance,
            occlusion,
        });
    }
    out
}
