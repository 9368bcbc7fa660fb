//! Deterministic simulator of federated learning under Byzantine attack.
//!
//! Each round the server samples clients, collects their locally trained
//! models (honest, sign-flipping or label-flipping), filters the updates with
//! a direction or descent-score test against the gradient of its own small
//! dataset, aggregates the survivors with a smoothed Weiszfeld geometric
//! median, clips the result, and finally runs a few SGD steps of its own
//! (server learning) whose displacement is clipped again.
//!
//! Everything is seeded: per-(client, round) random streams are derived from
//! the master seed, so client work can run on a rayon pool (feature
//! `parallel`, on by default) without changing a single bit of the output.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod config;
pub mod data;
pub mod defense;
pub mod error;
pub mod exec;
pub mod model;
pub mod orchestrator;
pub mod params;
pub mod runner;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
pub use params::ParamVector;
