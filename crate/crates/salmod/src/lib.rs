//! Desk-scale laboratory for saliency-modulated convolutional classification
//! under scarce training data.
//!
//! The core object of study is a two-branch network: a small convolutional
//! classifier whose feature maps are multiplicatively gated by a scalar
//! modulation image produced from a saliency map. Around it sits a full
//! experiment harness: a synthetic cluttered-shape dataset generator with
//! exact foreground masks, classical saliency estimators, a scarce-data
//! training protocol, gradient-energy instrumentation, and report/plot
//! tooling. Everything is deterministic given the seeds in the config.

pub mod analysis;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod netpbm;
pub mod saliency;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
