//! Federated training of the refinement detector: local SGD on each
//! vehicle's labeled frames, then equal-weight parameter averaging.

pub mod checkpoint;
pub mod model;
pub mod train;

pub use model::{
    gradient, loss, predict, Candidate, LabelSet, LossBreakdown, LossWeights, ModelParams, SensorFrame, FEATURE_DIM, PARAM_DIM,
};
pub use train::{fedavg, local_train, run_federated, CurveRow, FederatedOutcome, TrainConfig};
