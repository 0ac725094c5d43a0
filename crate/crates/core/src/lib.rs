//! Online domain adaptation over a target stream that can be read only once.
//!
//! A labeled source pool supervises a small ensemble of learners. Each target
//! query is adapted on, predicted, and then erased; see [`engine`] for the
//! update and [`metrics`] for how the stream is scored.

pub mod augment;
pub mod clock;
pub mod config;
pub mod data;
pub mod engine;
pub mod experiment;
pub mod metrics;
pub mod nn;
