//! Crossroad traffic generation by rejection sampling of constant-speed
//! lane-following tracks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::path::{LanePath, Maneuver};
use crate::error::{Error, Result};
use crate::geometry::{bev_intersection_area, ObjectState, Pose};
use crate::rng;

const TRACK_STREAM: u64 = 0x5452_4143;

pub const CATEGORY_CAR: u16 = 0;
pub const CATEGORY_VAN: u16 = 1;
pub const CATEGORY_TRUCK: u16 = 2;

/// Nominal `(l, w, h)` per category.
pub fn nominal_extents(category: u16) -> [f64; 3] {
    match category {
        CATEGORY_VAN => [5.2, 2.1, 2.2],
        CATEGORY_TRUCK => [8.0, 2.6, 3.2],
        _ => [4.5, 1.9, 1.6],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub duration: f64,
    pub frame_rate: f64,
    /// Intelligent (sensing) vehicles.
    pub num_vehicles: usize,
    /// Non-sensing traffic.
    pub num_background: usize,
    pub lane_width: f64,
    pub lanes_per_direction: usize,
    pub turn_radius: f64,
    pub speed_cap: f64,
    pub vehicle_speed: [f64; 2],
    /// Distance before the crossroad center where sensing vehicles start.
    pub vehicle_start_distance: [f64; 2],
    pub background_speed: [f64; 2],
    pub parked_fraction: f64,
    /// Half-length of road along which parked cars are placed.
    pub arena: f64,
    pub min_separation: f64,
    /// Footprint inflation used by the non-overlap check.
    pub clearance: f64,
    pub max_attempts: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            duration: 50.5,
            frame_rate: 20.0,
            num_vehicles: 5,
            num_background: 32,
            lane_width: 4.0,
            lanes_per_direction: 2,
            turn_radius: 6.0,
            speed_cap: 15.0,
            vehicle_speed: [1.0, 2.0],
            vehicle_start_distance: [40.0, 60.0],
            background_speed: [2.0, 8.0],
            parked_fraction: 0.35,
            arena: 70.0,
            min_separation: 3.5,
            clearance: 0.3,
            max_attempts: 2000,
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0] >= 0.0 && r[0] <= r[1] && r[1].is_finite()) {
        return Err(Error::invalid(format!("{name} must be an ordered non-negative range")));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= 0.0 && self.frame_rate > 0.0) {
            return Err(Error::invalid("duration must be non-negative and frame_rate positive"));
        }
        if !(self.lane_width > 0.0 && self.turn_radius > 0.0 && self.lanes_per_direction >= 1) {
            return Err(Error::invalid("lane geometry must be positive"));
        }
        check_range("vehicle_speed", self.vehicle_speed)?;
        check_range("vehicle_start_distance", self.vehicle_start_distance)?;
        check_range("background_speed", self.background_speed)?;
        if self.vehicle_speed[1] > self.speed_cap || self.background_speed[1] > self.speed_cap {
            return Err(Error::invalid("configured speeds exceed speed_cap"));
        }
        if !(0.0..=1.0).contains(&self.parked_fraction) {
            return Err(Error::invalid("parked_fraction must lie in [0, 1]"));
        }
        if !(self.arena > 0.0 && self.min_separation >= 0.0 && self.clearance >= 0.0) {
            return Err(Error::invalid("arena, min_separation and clearance must be non-negative"));
        }
        if self.max_attempts == 0 {
            return Err(Error::invalid("max_attempts must be at least 1"));
        }
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        (self.duration * self.frame_rate).round() as usize
    }
}

/// Ground truth of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldFrame {
    pub index: usize,
    pub time: f64,
    pub objects: Vec<ObjectState>,
    /// Pose of each sensing vehicle.
    pub poses: Vec<Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub seed: u64,
    /// Object id of each sensing vehicle.
    pub vehicles: Vec<usize>,
    pub frames: Vec<WorldFrame>,
}

impl Scenario {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_vehicles(&self) -> usize {
        self.vehicles.len()
    }

    pub fn num_objects(&self) -> usize {
        self.frames.first().map_or(0, |f| f.objects.len())
    }

    pub fn frame_rate(&self) -> f64 {
        self.config.frame_rate
    }

    pub fn pose(&self, vehicle: usize, frame: usize) -> Pose {
        self.frames[frame].poses[vehicle]
    }

    /// Largest per-frame center displacement of any object.
    pub fn max_step(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for pair in self.frames.windows(2) {
            for (a, b) in pair[0].objects.iter().zip(&pair[1].objects) {
                worst = worst.max(a.planar_distance(b));
            }
        }
        worst
    }
}

#[derive(Debug, Clone)]
struct Track {
    category: u16,
    extents: [f64; 3],
    path: LanePath,
    start: f64,
    speed: f64,
}

impl Track {
    fn state(&self, t: f64) -> ObjectState {
        let (p, heading) = self.path.at(self.start + self.speed * t);
        ObjectState::new(self.category, [p[0], p[1], self.extents[2] / 2.0], self.extents, heading)
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn sample_category(rng: &mut ChaCha8Rng) -> u16 {
    let u: f64 = rng.random();
    if u < 0.7 {
        CATEGORY_CAR
    } else if u < 0.9 {
        CATEGORY_VAN
    } else {
        CATEGORY_TRUCK
    }
}

fn sample_extents(rng: &mut ChaCha8Rng, category: u16) -> [f64; 3] {
    let base = nominal_extents(category);
    let s = rng.random_range(0.95..1.05);
    [base[0] * s, base[1] * s, base[2] * s]
}

fn sample_route(rng: &mut ChaCha8Rng, cfg: &ScenarioConfig) -> LanePath {
    let approach = rng.random_range(0..4);
    let maneuver = match rng.random_range(0..4) {
        0 => Maneuver::TurnRight,
        1 => Maneuver::TurnLeft,
        _ => Maneuver::Straight,
    };
    let lane = match maneuver {
        Maneuver::TurnLeft => 0,
        Maneuver::TurnRight => cfg.lanes_per_direction - 1,
        Maneuver::Straight => rng.random_range(0..cfg.lanes_per_direction),
    };
    LanePath::new(approach, lane, maneuver, cfg.lane_width, cfg.turn_radius)
}

fn sample_vehicle(rng: &mut ChaCha8Rng, cfg: &ScenarioConfig) -> Track {
    let path = sample_route(rng, cfg);
    let lead = uniform(rng, cfg.vehicle_start_distance);
    let speed = uniform(rng, cfg.vehicle_speed);
    let extents = sample_extents(rng, CATEGORY_CAR);
    Track {
        category: CATEGORY_CAR,
        extents,
        start: path.center_arclength - lead,
        path,
        speed,
    }
}

fn sample_background(rng: &mut ChaCha8Rng, cfg: &ScenarioConfig) -> Track {
    let category = sample_category(rng);
    let extents = sample_extents(rng, category);
    if rng.random::<f64>() < cfg.parked_fraction {
        let approach = rng.random_range(0..4usize);
        let road_edge = cfg.lanes_per_direction as f64 * cfg.lane_width;
        let offset = road_edge + extents[1] / 2.0 + 0.5;
        let clear = road_edge + cfg.turn_radius;
        let along = -rng.random_range(clear..cfg.arena.max(clear + 1.0));
        let a = approach as f64 * std::f64::consts::FRAC_PI_2;
        let (s, c) = a.sin_cos();
        let p = [c * along + s * offset, s * along - c * offset];
        return Track {
            category,
            extents,
            path: LanePath::parked(p, crate::geometry::wrap_angle(a)),
            start: 0.0,
            speed: 0.0,
        };
    }
    let path = sample_route(rng, cfg);
    let speed = uniform(rng, cfg.background_speed);
    let pass_time = rng.random_range(-10.0..cfg.duration + 10.0);
    Track {
        category,
        extents,
        start: path.center_arclength - speed * pass_time,
        path,
        speed,
    }
}

fn conflicts(a: &[ObjectState], b: &[ObjectState], cfg: &ScenarioConfig) -> bool {
    a.iter().zip(b).any(|(x, y)| {
        let d = x.planar_distance(y);
        if d < cfg.min_separation {
            return true;
        }
        let reach = (x.length().hypot(x.width()) + y.length().hypot(y.width())) / 2.0 + cfg.clearance;
        if d > reach {
            return false;
        }
        let mut xi = *x;
        let mut yi = *y;
        for e in [&mut xi.extents, &mut yi.extents] {
            e[0] += cfg.clearance;
            e[1] += cfg.clearance;
        }
        bev_intersection_area(&xi, &yi) > 0.0
    })
}

/// Samples `num_vehicles` sensing vehicles and `num_background` other
/// objects whose trajectories never come closer than the configured
/// separation. Deterministic in `seed`.
pub fn generate_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    cfg.validate()?;
    let n = cfg.num_frames();
    let times: Vec<f64> = (0..n).map(|f| f as f64 / cfg.frame_rate).collect();
    let mut tracks: Vec<Vec<ObjectState>> = Vec::new();
    let total = cfg.num_vehicles + cfg.num_background;
    for id in 0..total {
        let mut rng = rng::stream(seed, &[TRACK_STREAM, id as u64]);
        let mut accepted = None;
        for _ in 0..cfg.max_attempts {
            let track = if id < cfg.num_vehicles {
                sample_vehicle(&mut rng, cfg)
            } else {
                sample_background(&mut rng, cfg)
            };
            let states: Vec<ObjectState> = times.iter().map(|&t| track.state(t)).collect();
            if tracks.iter().all(|other| !conflicts(&states, other, cfg)) {
                accepted = Some(states);
                break;
            }
        }
        match accepted {
            Some(states) => tracks.push(states),
            None => {
                return Err(Error::Infeasible(format!(
                    "could not place object {id} after {} attempts",
                    cfg.max_attempts
                )))
            }
        }
    }

    let vehicles: Vec<usize> = (0..cfg.num_vehicles).collect();
    let frames = (0..n)
        .map(|f| {
            let objects: Vec<ObjectState> = tracks.iter().map(|t| t[f]).collect();
            let poses = vehicles
                .iter()
                .map(|&v| {
                    let o = &objects[v];
                    Pose::new([o.center[0], o.center[1], 0.0], o.yaw)
                })
                .collect();
            WorldFrame {
                index: f,
                time: times[f],
                objects,
                poses,
            }
        })
        .collect();
    Ok(Scenario {
        config: cfg.clone(),
        seed,
        vehicles,
        frames,
    })
}
