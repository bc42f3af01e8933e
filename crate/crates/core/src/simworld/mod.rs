//! Synthetic crossroad world: ground-truth traffic, sensing vehicles, and a
//! noisy object detector standing in for real perception.

pub mod io;
pub mod path;
pub mod scenario;
pub mod sensor;
pub mod visibility;

pub use scenario::{generate_scenario, Scenario, ScenarioConfig, WorldFrame};
pub use sensor::{
    sense, sense_visible, visibility_table, visible_sets, BiasVector, DetectorNoiseSpec, ScoreModel, SensedFrame, SensingConfig,
    VehicleNoise,
};
pub use visibility::{visible_from, SensorSpec, VisibleObject};
