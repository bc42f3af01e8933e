//! Cooperative dynamic-map fusion: vehicles upload noisy object lists, an edge
//! server clusters, fuses and prunes them into a global map, and a federated
//! refinement model is trained from ground truth or from the fused map itself.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod association;
pub mod distill;
pub mod error;
pub mod evalbench;
pub mod exec;
pub mod fedlearn;
pub mod fusion;
pub mod geometry;
pub mod orchestrator;
pub mod rng;
pub mod simworld;

pub use error::{Error, Result};
pub use exec::Exec;
