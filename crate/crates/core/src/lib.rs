//! Class-attribute priors.
//!
//! Per-class attributes (frequency, difficulty, test-time weights, label noise,
//! classifier norms) are expanded through a fixed basis dictionary and mapped
//! linearly to per-class loss hyperparameters: a weight `omega`, an additive
//! logit adjustment `l` and a multiplicative adjustment `delta`. Those
//! hyperparameters are tuned either post hoc on frozen logits or by bilevel
//! training of a small model, against a family of fairness objectives.
//!
//! The crate is `no_std` and only needs `alloc`. File formats and the command
//! line runner live in the `cap-cli` crate.

#![no_std]

extern crate alloc;

pub mod attributes;
pub mod bilevel;
pub mod cap_map;
pub mod domain;
pub mod error;
pub mod gmm;
pub mod loss;
pub mod math;
pub mod objectives;
pub mod posthoc;
pub mod synth;

pub use error::{Error, Result};
