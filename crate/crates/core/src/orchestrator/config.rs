use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distill::{Coverage, LabelScope, TeacherRegistry};
use crate::error::{Error, Result};
use crate::evalbench::{EvalThresholds, Method};
use crate::fedlearn::TrainConfig;
use crate::fusion::FusionConfig;
use crate::rng::derive_seed;
use crate::simworld::{BiasVector, ScenarioConfig, SensingConfig, VehicleNoise};

/// Named seeds for every random stream of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub scenario: u64,
    pub sensing: u64,
    /// Replaces `train.seed` for every training run.
    pub training: u64,
}

impl Seeds {
    pub fn from_base(base: u64) -> Self {
        Self {
            scenario: derive_seed(base, &[1]),
            sensing: derive_seed(base, &[2]),
            training: derive_seed(base, &[3]),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Self::from_base(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillSettings {
    pub scope: LabelScope,
    /// Mean divergence above which a vehicle counts as a student.
    pub student_threshold: f64,
    /// Gate for ground-truth labels in perfect FL.
    pub truth_gate: f64,
}

impl Default for DistillSettings {
    fn default() -> Self {
        Self {
            scope: LabelScope::AllVehicles,
            student_threshold: 0.3,
            truth_gate: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Half-open test window `[start, end)` in seconds.
    pub test_window: [f64; 2],
    pub methods: Vec<Method>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            test_window: [25.5, 50.5],
            methods: Method::ALL.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn test_frames(&self, num_frames: usize, frame_rate: f64) -> Vec<usize> {
        (0..num_frames)
            .filter(|&f| {
                let t = f as f64 / frame_rate;
                t >= self.test_window[0] && t < self.test_window[1]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub sensing: SensingConfig,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    pub teachers: TeacherRegistry,
    pub distill: DistillSettings,
    pub eval: EvalThresholds,
    pub experiment: ExperimentConfig,
    pub seeds: Seeds,
}

/// Systematic per-vehicle detector offsets of the default benchmark.
pub const BENCHMARK_BIASES: [BiasVector; 5] = [
    [0.175, 0.0, 0.0, 0.14, 0.0, 0.0, 0.021],
    [0.0, 0.175, 0.0, -0.14, 0.07, 0.0, -0.021],
    [-0.175, 0.0, 0.035, 0.14, -0.07, 0.0, 0.0],
    [0.0, -0.175, 0.0, -0.14, 0.0, 0.07, 0.021],
    [0.126, 0.126, 0.0, 0.14, 0.07, 0.0, -0.021],
];

/// Default sensing plus [`BENCHMARK_BIASES`].
pub fn benchmark_sensing() -> SensingConfig {
    SensingConfig {
        vehicles: BENCHMARK_BIASES
            .iter()
            .enumerate()
            .map(|(vehicle, b)| VehicleNoise {
                vehicle,
                bias: Some(*b),
                ..VehicleNoise::default()
            })
            .collect(),
        ..SensingConfig::default()
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            sensing: benchmark_sensing(),
            fusion: FusionConfig::default(),
            train: TrainConfig::default(),
            teachers: TeacherRegistry {
                teachers: vec![Coverage::Disc {
                    center: [0.0, 0.0],
                    radius: 20.0,
                }],
                ..TeacherRegistry::default()
            },
            distill: DistillSettings::default(),
            eval: EvalThresholds::default(),
            experiment: ExperimentConfig::default(),
            seeds: Seeds::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Training settings with the run's training seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seeds.training,
            ..self.train
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.sensing.validate()?;
        self.fusion.validate()?;
        self.train.validate()?;
        self.teachers.validate()?;
        self.eval.validate()?;
        if let Some(v) = self.sensing.vehicles.iter().find(|v| v.vehicle >= self.scenario.num_vehicles) {
            return Err(Error::invalid(format!(
                "sensing override for vehicle {} but only {} vehicles exist",
                v.vehicle, self.scenario.num_vehicles
            )));
        }
        if !(0.0..=1.0).contains(&self.distill.student_threshold) {
            return Err(Error::invalid("student_threshold must lie in [0, 1]"));
        }
        if !(self.distill.truth_gate > 0.0) {
            return Err(Error::invalid("truth_gate must be positive"));
        }
        let w = self.experiment.test_window;
        if !(w[0] < w[1]) {
            return Err(Error::invalid("test_window start must precede its end"));
        }
        if self
            .experiment
            .test_frames(self.scenario.num_frames(), self.scenario.frame_rate)
            .is_empty()
        {
            return Err(Error::invalid("test_window contains no frames"));
        }
        let m = &self.experiment.methods;
        if m.is_empty() {
            return Err(Error::invalid("at least one method is required"));
        }
        if (1..m.len()).any(|i| m[..i].contains(&m[i])) {
            return Err(Error::invalid("methods must not repeat"));
        }
        Ok(())
    }
}
