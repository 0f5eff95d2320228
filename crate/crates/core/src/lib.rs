//! Conversion-rate prediction under delayed feedback.
//!
//! Conversions that have not arrived yet look like negatives at training
//! time, and how likely a conversion is to have arrived depends on the click.
//! This crate provides the inverse-propensity (IPS) and inverse-CVR (ICVR)
//! loss estimators that correct for this, their non-negative variants, a dual
//! learner that fits a CVR predictor and a propensity estimator in
//! alternation, Oracle/Naive/DFM baselines, a synthetic click-log generator
//! and an experiment grid runner.

pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod synthgen;
pub mod trainers;

pub use error::{Error, Result};
