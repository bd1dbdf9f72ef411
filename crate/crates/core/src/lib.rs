//! Desk-scale sparse-training laboratory.
//!
//! A self-contained `f64` training engine (dense, conv, batch norm), an
//! iterative global pruning core with sign-flip bookkeeping, the flip-based
//! saliency criterion with self-annealing gradient noise, a set of pruning
//! baselines, deterministic dataset generators and IDX loading, and a seeded
//! experiment harness that writes metrics, mask artifacts, and plot-ready
//! CSV summaries.

pub mod baselines;
pub mod config;
pub mod data;
pub mod error;
pub mod flipout;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod oracle;
pub mod params;
pub mod prune;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
