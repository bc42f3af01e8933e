//! V2X message protocol, the vehicle/edge system loop, and end-to-end
//! experiments.

pub mod codec;
pub mod config;
pub mod experiment;
pub mod system;

pub use codec::{decode, encode, ByteLedger, MessageKind, Payload, V2xMessage};
pub use config::{benchmark_sensing, DistillSettings, ExperimentConfig, RunConfig, Seeds};
pub use experiment::{run_experiment, write_bench_outputs, ExperimentRun};
pub use system::{federated_training, run_frame, FrameInputs, FrameResult, TrainingLabels, TrainingRun};
