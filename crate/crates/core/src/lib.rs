//! Group fairness audits for risk-scoring pipelines.
//!
//! An audit follows one cohort through three stages: the outcome labels
//! themselves, the model's binary predictions, and the percentile risk tiers
//! built from those predictions. [`report::run_audit`] bundles all three plus
//! a stage-to-stage amplification comparison into one [`report::AuditReport`].

pub mod amplification;
pub mod config;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model;
pub mod report;
pub mod synth;
pub mod tiering;

pub use error::{Error, Result};
