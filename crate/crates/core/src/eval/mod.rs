//! Experiment harness: metrics, scenarios, odometry emulation and the
//! single-frame and sequence experiments.

pub mod experiment;
pub mod metrics;
pub mod odometry;
pub mod pipeline;
pub mod scenario;
