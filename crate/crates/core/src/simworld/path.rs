//! Lane-following paths through a four-way crossroad.
//!
//! Paths are built in a canonical frame where the vehicle approaches from the
//! west heading east, then rotated to one of the four approaches. Traffic
//! keeps right, so eastbound lanes sit at negative y.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Point2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Maneuver {
    Straight,
    TurnRight,
    TurnLeft,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Segment {
    Line {
        start: Point2,
        heading: f64,
        length: f64,
    },
    Arc {
        center: Point2,
        radius: f64,
        start_angle: f64,
        /// Signed sweep; negative turns clockwise.
        sweep: f64,
    },
}

impl Segment {
    fn length(&self) -> f64 {
        match *self {
            Segment::Line { length, .. } => length,
            Segment::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    fn at(&self, s: f64) -> (Point2, f64) {
        match *self {
            Segment::Line { start, heading, .. } => ([start[0] + s * heading.cos(), start[1] + s * heading.sin()], heading),
            Segment::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let dir = sweep.signum();
                let a = start_angle + dir * s / radius;
                let p = [center[0] + radius * a.cos(), center[1] + radius * a.sin()];
                (p, wrap_angle(a + dir * FRAC_PI_2))
            }
        }
    }
}

/// A path parameterized by arclength. The last segment extends forever and
/// arclengths before zero extend the first segment backwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanePath {
    segments: Vec<Segment>,
    /// Arclength at which the path passes closest to the crossroad center.
    pub center_arclength: f64,
}

pub const APPROACH_LENGTH: f64 = 300.0;

impl LanePath {
    /// Builds a path entering from `approach` (0 = from the west, then
    /// counter-clockwise) in lane `lane` (0 = inner).
    pub fn new(approach: usize, lane: usize, maneuver: Maneuver, lane_width: f64, turn_radius: f64) -> Self {
        let y = -(lane as f64 + 0.5) * lane_width;
        let start = [-APPROACH_LENGTH, y];
        let (mut segments, center_arclength) = match maneuver {
            Maneuver::Straight => (
                vec![Segment::Line {
                    start,
                    heading: 0.0,
                    length: f64::INFINITY,
                }],
                APPROACH_LENGTH,
            ),
            Maneuver::TurnRight => {
                // Ends in the southbound lane at x = y (same offset from center).
                let cx = y - turn_radius;
                let cy = y - turn_radius;
                let lead = cx - start[0];
                let arc = Segment::Arc {
                    center: [cx, cy],
                    radius: turn_radius,
                    start_angle: FRAC_PI_2,
                    sweep: -FRAC_PI_2,
                };
                let exit = [y, cy];
                (
                    vec![
                        Segment::Line {
                            start,
                            heading: 0.0,
                            length: lead,
                        },
                        arc,
                        Segment::Line {
                            start: exit,
                            heading: -FRAC_PI_2,
                            length: f64::INFINITY,
                        },
                    ],
                    lead + arc.length() / 2.0,
                )
            }
            Maneuver::TurnLeft => {
                // Ends in the northbound lane at x = -y.
                let x_out = -y;
                let cx = x_out - turn_radius;
                let cy = y + turn_radius;
                let lead = cx - start[0];
                let arc = Segment::Arc {
                    center: [cx, cy],
                    radius: turn_radius,
                    start_angle: -FRAC_PI_2,
                    sweep: FRAC_PI_2,
                };
                (
                    vec![
                        Segment::Line {
                            start,
                            heading: 0.0,
                            length: lead,
                        },
                        arc,
                        Segment::Line {
                            start: [x_out, cy],
                            heading: FRAC_PI_2,
                            length: f64::INFINITY,
                        },
                    ],
                    lead + arc.length() / 2.0,
                )
            }
        };
        let rot = approach as f64 * FRAC_PI_2;
        for seg in &mut segments {
            rotate_segment(seg, rot);
        }
        LanePath {
            segments,
            center_arclength,
        }
    }

    /// A path that never moves: a parked vehicle.
    pub fn parked(position: Point2, heading: f64) -> Self {
        LanePath {
            segments: vec![Segment::Line {
                start: position,
                heading,
                length: f64::INFINITY,
            }],
            center_arclength: 0.0,
        }
    }

    /// Position and heading at arclength `s`.
    pub fn at(&self, s: f64) -> (Point2, f64) {
        if s < 0.0 {
            let (p, h) = self.segments[0].at(0.0);
            return ([p[0] + s * h.cos(), p[1] + s * h.sin()], h);
        }
        let mut rest = s;
        for seg in &self.segments {
            let len = seg.length();
            if rest <= len {
                return seg.at(rest);
            }
            rest -= len;
        }
        unreachable!("last segment is unbounded")
    }
}

fn rotate(p: Point2, a: f64) -> Point2 {
    let (s, c) = a.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

fn rotate_segment(seg: &mut Segment, a: f64) {
    match seg {
        Segment::Line { start, heading, .. } => {
            *start = rotate(*start, a);
            *heading = wrap_angle(*heading + a);
        }
        Segment::Arc { center, start_angle, .. } => {
            *center = rotate(*center, a);
            *start_angle = wrap_angle(*start_angle + a);
        }
    }
}

/// Heading of traffic entering from `approach`.
pub fn approach_heading(approach: usize) -> f64 {
    wrap_angle(approach as f64 * FRAC_PI_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Point2, b: Point2) -> bool {
        (a[0] - b[0]).hypot(a[1] - b[1]) < 1e-9
    }

    #[test]
    fn straight_passes_center_line() {
        let p = LanePath::new(0, 1, Maneuver::Straight, 4.0, 6.0);
        let (pos, h) = p.at(p.center_arclength);
        assert!(close(pos, [0.0, -6.0]));
        assert_eq!(h, 0.0);
    }

    #[test]
    fn turns_are_continuous() {
        for m in [Maneuver::TurnRight, Maneuver::TurnLeft] {
            for approach in 0..4 {
                let p = LanePath::new(approach, 0, m, 4.0, 6.0);
                let mut prev = p.at(-5.0).0;
                let mut s = -5.0;
                while s < 400.0 {
                    s += 0.05;
                    let (q, _) = p.at(s);
                    let step = (q[0] - prev[0]).hypot(q[1] - prev[1]);
                    assert!(step <= 0.05 + 1e-9, "{m:?} jump {step} at {s}");
                    prev = q;
                }
            }
        }
    }

    #[test]
    fn right_turn_exits_southbound() {
        let p = LanePath::new(0, 1, Maneuver::TurnRight, 4.0, 6.0);
        let (pos, h) = p.at(400.0);
        assert!((h + FRAC_PI_2).abs() < 1e-12);
        assert!((pos[0] + 6.0).abs() < 1e-9);
    }

    #[test]
    fn left_turn_exits_northbound() {
        let p = LanePath::new(0, 0, Maneuver::TurnLeft, 4.0, 6.0);
        let (pos, h) = p.at(400.0);
        assert!((h - FRAC_PI_2).abs() < 1e-12);
        assert!((pos[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn approaches_rotate() {
        let p = LanePath::new(1, 0, Maneuver::Straight, 4.0, 6.0);
        let (pos, h) = p.at(p.center_arclength);
        assert!(close(pos, [2.0, 0.0]));
        assert!((h - FRAC_PI_2).abs() < 1e-12);
    }
}
