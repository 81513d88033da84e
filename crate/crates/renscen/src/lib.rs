//! Scenario forecasting for renewable generation.
//!
//! The crate trains an attention-based encoder-decoder generator inside a
//! GAN loop, then samples forecast scenarios whose spread separates into a
//! model-uncertainty part (dropout-mask resampling across pattern draws)
//! and a noise-uncertainty part (latent-vector resampling within a pattern).
//! Around that core sit a data pipeline for aligned multi-site time series,
//! a probabilistic scoring suite, and a toy two-stage stochastic
//! unit-commitment harness that consumes the sampled scenarios.
//!
//! Everything is `f64`, deterministic under a master seed, and free of
//! external numeric dependencies: the reverse-mode tape in [`tensor`] is
//! the only differentiation engine used.

pub mod attention;
pub mod cli;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod embed;
pub mod error;
pub mod forecaster;
pub mod objectives;
pub mod metrics;
pub mod params;
pub mod scenario;
pub mod seedstream;
pub mod tensor;
pub mod trainer;
pub mod uc;

#[cfg(test)]
pub(crate) mod testkit;
