//! Traffic-speed forecasting with spatio-temporal graph convolutional networks,
//! knowledge distillation from a large teacher into a small student, and joint
//! KD-aware pruning that discovers the student architecture.
//!
//! The crate is organised around five subsystems:
//!
//! * [`datahub`] — PeMS-format ingestion, adjacency construction, windowing and
//!   synthetic desk-scale data generation.
//! * [`model`] — the configurable ST-GCN with hidden-feature taps, pruning
//!   masks, checkpoints and an analytic FLOP counter.
//! * [`losses`] — response-based and correlation-based distillation objectives.
//! * [`pruner`] — KDIS importance scoring and the joint KD-pruning loop.
//! * [`train`] — teacher/student training, sequential multi-horizon prediction,
//!   metric reporting, latency benchmarking and feature-projection export.

pub mod datahub;
pub mod error;
pub mod losses;
pub mod model;
pub mod presets;
pub mod pruner;
pub mod runconfig;
pub mod train;

pub use error::{Error, Result};

/// Batched node-feature sequences with axes `(batch, time, node, channel)`.
pub type TrafficTensor = ndarray::Array4<f64>;
