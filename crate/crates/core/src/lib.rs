//! Logistic knowledge tracing engine: event ingestion, streaming history
//! features, sparse logistic fitting with nonlinear parameter search,
//! covariance-based skill clustering, evaluation metrics and a practice
//! simulator for pedagogical decision rules.

pub mod clustering;
mod codec;
pub mod error;
pub mod event_log;
pub mod features;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod pdr_sim;
pub mod synth;

pub use error::{Error, Result};
