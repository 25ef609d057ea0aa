//! Multi-objective preference alignment laboratory.
//!
//! The crate builds per-objective preference datasets from a policy's own
//! generations, trains a weight-conditioned policy with DPO and MODPO,
//! iterates the pipeline with the aligned policy as the new reference, and
//! checks estimation and sub-optimality bounds against exact oracles on
//! synthetic linear-reward environments.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod cli;
pub mod env;
pub mod error;
pub mod pdc;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod theory;
pub mod types;

pub use error::{Error, Result};
