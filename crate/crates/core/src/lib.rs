//! Causal anomaly ranking for multi-run multivariate sensor data.
//!
//! The pipeline has three stages:
//!
//! 1. [`ticc`] learns a state-aware profile of a window of runs: windows of
//!    consecutive timestamps are clustered into Gaussian Markov random fields
//!    with block-Toeplitz precision matrices, with penalties for switching
//!    state inside a run and for disagreeing with the neighbouring run.
//! 2. [`profile`] compares consecutive profiles and flags anomalous runs.
//! 3. [`rca`] scores every (sensor, timestamp) of an anomalous run by
//!    reconstructing the vanished correlations through a fault-propagation
//!    model that keeps each time lag separate.
//!
//! [`synth`] plants profiles and anomalies with known ground truth and
//! [`eval`] measures rankings against it.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod pipeline;
pub mod profile;
pub mod rca;
pub mod seed;
pub mod sweep;
pub mod synth;
pub mod ticc;

pub use error::{Error, Result};
