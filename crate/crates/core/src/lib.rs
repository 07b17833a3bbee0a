//! Honest multi-treatment causal forests, effect aggregation and
//! treatment allocation.

pub mod allocation;
pub mod cluster;
pub mod dataset;
pub mod effects;
pub mod error;
pub mod forest;
pub mod pipeline;
pub mod placebo;
pub mod policy_tree;
pub mod report;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
