//! Desk-scale laboratory for studying memorization in a tiny text-to-image
//! diffusion model: induce it on purpose, locate it in cross-attention, and
//! mitigate it at inference time with surgical attention edits and a
//! contrastive guidance rule.

pub mod attention;
pub mod attenuate;
pub mod baselines;
pub mod config;
pub mod error;
pub mod guidance;
pub mod harness;
pub mod kernels;
pub mod lab;
pub mod model;
pub mod plot;
pub mod schedule;
pub mod spike;
pub mod store;
pub mod tape;
pub mod text;
pub mod train;

pub use error::{Error, Result};
