//! Federated learning simulator for multivariate time-series forecasting.
//!
//! Nodes train local forecasters on private windows of sensor data, a
//! coordinator fuses them with sample-weighted Federated Averaging, and the
//! resulting global model is then personalized per node by Active Learning,
//! Knowledge Distillation or Local Memorization.

pub mod data;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod federation;
pub mod metrics;
pub mod models;
pub mod personalization;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Execution;
