//! Noisy detector: misses, Gaussian box noise, per-vehicle bias, heading
//! flips, a range/occlusion-dependent score, and Poisson false positives.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::scenario::{nominal_extents, Scenario, CATEGORY_CAR};
use super::visibility::{visible_from, SensorSpec, VisibleObject};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fedlearn::{Candidate, SensorFrame};
use crate::fusion::{LocalMap, ScoredDetection};
use crate::geometry::{wrap_angle, ObjectState};
use crate::rng;

const DETECT_STREAM: u64 = 0x4445_5445;
const CLUTTER_STREAM: u64 = 0x434C_5554;
/// Smallest extent the detector reports.
const MIN_OBSERVED_EXTENT: f64 = 0.1;

/// Score logit `a − b·d/range − c·occlusion + N(0, σ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreModel {
    pub base: f64,
    pub per_range: f64,
    pub per_occlusion: f64,
    pub sigma: f64,
}

impl Default for ScoreModel {
    fn default() -> Self {
        Self {
            base: 4.0,
            per_range: 3.0,
            per_occlusion: 2.0,
            sigma: 0.5,
        }
    }
}

/// Offsets added to every detection in the vehicle's own frame:
/// `[dx, dy, dz, dl, dw, dh, dyaw]`.
pub type BiasVector = [f64; 7];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorNoiseSpec {
    pub miss_probability: f64,
    /// Extra miss probability at full range, linear in distance.
    pub miss_per_range: f64,
    /// Extra miss probability at full occlusion.
    pub miss_per_occlusion: f64,
    /// Mean false positives per frame.
    pub false_positive_rate: f64,
    pub false_positive_score_mean: f64,
    pub false_positive_score_sigma: f64,
    pub center_sigma: f64,
    pub center_sigma_per_range: f64,
    pub center_sigma_per_occlusion: f64,
    pub extent_sigma: f64,
    pub yaw_sigma: f64,
    pub flip_probability: f64,
    pub bias: BiasVector,
    pub score: ScoreModel,
}

impl Default for DetectorNoiseSpec {
    fn default() -> Self {
        Self {
            miss_probability: 0.05,
            miss_per_range: 0.15,
            miss_per_occlusion: 0.4,
            false_positive_rate: 0.3,
            false_positive_score_mean: -1.0,
            false_positive_score_sigma: 0.7,
            center_sigma: 0.12,
            center_sigma_per_range: 0.2,
            center_sigma_per_occlusion: 0.2,
            extent_sigma: 0.08,
            yaw_sigma: 0.03,
            flip_probability: 0.02,
            bias: [0.0; 7],
            score: ScoreModel::default(),
        }
    }
}

impl DetectorNoiseSpec {
    /// Perfect detector: every visible object, exact boxes, score 4.
    pub fn noiseless() -> Self {
        Self {
            miss_probability: 0.0,
            miss_per_range: 0.0,
            miss_per_occlusion: 0.0,
            false_positive_rate: 0.0,
            false_positive_score_mean: 0.0,
            false_positive_score_sigma: 0.0,
            center_sigma: 0.0,
            center_sigma_per_range: 0.0,
            center_sigma_per_occlusion: 0.0,
            extent_sigma: 0.0,
            yaw_sigma: 0.0,
            flip_probability: 0.0,
            bias: [0.0; 7],
            score: ScoreModel {
                base: 4.0,
                per_range: 0.0,
                per_occlusion: 0.0,
                sigma: 0.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.miss_probability, self.flip_probability];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("probabilities must lie in [0, 1]"));
        }
        let nonneg = [
            self.miss_per_range,
            self.miss_per_occlusion,
            self.false_positive_rate,
            self.false_positive_score_sigma,
            self.center_sigma,
            self.center_sigma_per_range,
            self.center_sigma_per_occlusion,
            self.extent_sigma,
            self.yaw_sigma,
            self.score.sigma,
        ];
        if nonneg.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::invalid("noise rates and sigmas must be finite and non-negative"));
        }
        if self.bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("bias entries must be finite"));
        }
        Ok(())
    }

    fn miss_chance(&self, distance: f64, occlusion: f64, range: f64) -> f64 {
        (self.miss_probability + self.miss_per_range * distance / range + self.miss_per_occlusion * occlusion).clamp(0.0, 1.0)
    }
}

/// Per-vehicle departures from the shared noise spec.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleNoise {
    pub vehicle: usize,
    #[serde(default)]
    pub bias: Option<BiasVector>,
    #[serde(default)]
    pub flip_probability: Option<f64>,
    #[serde(default)]
    pub miss_probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensingConfig {
    pub sensor: SensorSpec,
    pub noise: DetectorNoiseSpec,
    pub vehicles: Vec<VehicleNoise>,
}

impl SensingConfig {
    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        self.noise.validate()?;
        for v in &self.vehicles {
            self.noise_for(v.vehicle).validate()?;
        }
        Ok(())
    }

    /// Effective noise settings of one vehicle.
    pub fn noise_for(&self, vehicle: usize) -> DetectorNoiseSpec {
        let mut spec = self.noise;
        for o in self.vehicles.iter().filter(|o| o.vehicle == vehicle) {
            if let Some(b) = o.bias {
                spec.bias = b;
            }
            if let Some(p) = o.flip_probability {
                spec.flip_probability = p;
            }
            if let Some(p) = o.miss_probability {
                spec.miss_probability = p;
            }
        }
        spec
    }
}

/// Output of one vehicle's sensor for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SensedFrame {
    pub local: LocalMap,
    pub sensor: SensorFrame,
    /// Ground-truth object behind each detection; `None` for false positives.
    pub sources: Vec<Option<usize>>,
}

fn gaussian(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
}

/// Visible objects of every vehicle in a frame.
pub fn visible_sets(scenario: &Scenario, frame: usize, spec: &SensorSpec) -> Vec<Vec<VisibleObject>> {
    let wf = &scenario.frames[frame];
    scenario
        .vehicles
        .iter()
        .enumerate()
        .map(|(k, &obj)| visible_from(&wf.poses[k], &wf.objects, Some(obj), spec))
        .collect()
}

/// Visibility for all frames; `[frame][vehicle]`.
pub fn visibility_table(scenario: &Scenario, spec: &SensorSpec, exec: Exec) -> Vec<Vec<Vec<VisibleObject>>> {
    exec.map_range(scenario.num_frames(), |f| visible_sets(scenario, f, spec))
}

/// Simulates one vehicle's detector on one frame given its visible set.
pub fn sense_visible(
    scenario: &Scenario,
    vehicle: usize,
    frame: usize,
    visible: &[VisibleObject],
    spec: &SensorSpec,
    noise: &DetectorNoiseSpec,
    seed: u64,
) -> SensedFrame {
    let wf = &scenario.frames[frame];
    let pose = wf.poses[vehicle];
    let mut detections = Vec::new();
    let mut candidates = Vec::new();
    let mut sources = Vec::new();

    for v in visible {
        let mut rng = rng::stream(seed, &[DETECT_STREAM, vehicle as u64, frame as u64, v.object as u64]);
        let missed = rng.random::<f64>() < noise.miss_chance(v.distance, v.occlusion, spec.range);
        if missed {
            continue;
        }
        let truth = pose.to_local(&wf.objects[v.object]);
        let frac = v.distance / spec.range;
        let sigma_c = noise.center_sigma + noise.center_sigma_per_range * frac + noise.center_sigma_per_occlusion * v.occlusion;
        let mut obs = truth;
        obs.center[0] += gaussian(&mut rng, sigma_c) + noise.bias[0];
        obs.center[1] += gaussian(&mut rng, sigma_c) + noise.bias[1];
        obs.center[2] += gaussian(&mut rng, 0.25 * sigma_c) + noise.bias[2];
        for d in 0..3 {
            obs.extents[d] = (obs.extents[d] + gaussian(&mut rng, noise.extent_sigma) + noise.bias[3 + d]).max(MIN_OBSERVED_EXTENT);
        }
        let mut yaw = obs.yaw + gaussian(&mut rng, noise.yaw_sigma) + noise.bias[6];
        if rng.random::<f64>() < noise.flip_probability {
            yaw += std::f64::consts::PI;
        }
        obs.yaw = wrap_angle(yaw);
        let s = &noise.score;
        let score = s.base - s.per_range * frac - s.per_occlusion * v.occlusion + gaussian(&mut rng, s.sigma);

        detections.push(ScoredDetection { state: obs, score });
        candidates.push(Candidate::new(&obs, v.distance, v.occlusion, score, vehicle));
        sources.push(Some(v.object));
    }

    if noise.false_positive_rate > 0.0 {
        let mut rng = rng::stream(seed, &[CLUTTER_STREAM, vehicle as u64, frame as u64]);
        let count = Poisson::new(noise.false_positive_rate).expect("positive rate").sample(&mut rng) as usize;
        for _ in 0..count {
            let r = (spec.range * rng.random::<f64>().sqrt()).max(3.0);
            let bearing = rng.random_range(-spec.fov / 2.0..=spec.fov / 2.0);
            let ext = nominal_extents(CATEGORY_CAR);
            let state = ObjectState::new(
                CATEGORY_CAR,
                [r * bearing.cos(), r * bearing.sin(), ext[2] / 2.0],
                ext,
                rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            );
            let score = noise.false_positive_score_mean + gaussian(&mut rng, noise.false_positive_score_sigma);
            detections.push(ScoredDetection { state, score });
            candidates.push(Candidate::new(&state, r, 0.0, score, vehicle));
            sources.push(None);
        }
    }

    SensedFrame {
        local: LocalMap {
            vehicle,
            frame_time: wf.time,
            pose,
            detections,
        },
        sensor: SensorFrame {
            frame_time: wf.time,
            candidates,
        },
        sources,
    }
}

/// Simulates one vehicle's detector on one frame.
pub fn sense(scenario: &Scenario, vehicle: usize, frame: usize, spec: &SensorSpec, noise: &DetectorNoiseSpec, seed: u64) -> SensedFrame {
    let wf = &scenario.frames[frame];
    let visible = visible_from(&wf.poses[vehicle], &wf.objects, Some(scenario.vehicles[vehicle]), spec);
    sense_visible(scenario, vehicle, frame, &visible, spec, noise, seed)
}
