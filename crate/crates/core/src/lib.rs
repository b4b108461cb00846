//! Optimistic online task inference for successor-feature policy families.
//!
//! A policy family indexed by task vectors `z` is queried through its
//! successor features `ψ(s, z)`. The learner keeps a ridge-regression
//! estimate of the unknown reward vector from `(φ(s), r)` labels and picks
//! the `z` that is best under the most favourable task inside the current
//! confidence ellipsoid (or a posterior draw, for the Thompson variant).
//!
//! Modules:
//! - [`linest`]: online least squares, ellipsoid geometry, posterior sampling.
//! - [`sfworld`]: synthetic MDPs with exact successor features.
//! - [`agent`]: selection rules, the step/episode loop, warm start, offline inference.
//! - [`harness`]: multi-seed experiments, baselines, CSV output.
//! - [`propcheck`]: randomized checks of the supporting inequalities.
//! - [`cli`]: the `optibfm` command line.

pub mod agent;
pub mod cli;
pub mod error;
pub mod harness;
pub mod linest;
pub mod propcheck;
pub mod rng;
pub mod sfworld;
pub mod stats;

pub use error::{Error, Result};
pub use linest::{ConfidenceSpec, Estimator, EstimatorSnapshot};
