//! Time-varying influenceability consensus model of opinion revision.
//!
//! Each participant revises their judgment toward the group mean,
//! `x_i(r+1) = x_i(r) + alpha_i(r) * (mean(r) - x_i(r))`, with one
//! influenceability per revision step. The crate fits these
//! influenceabilities, clusters them into typical population behaviours,
//! crossvalidates the resulting predictors, and estimates the intrinsic
//! unpredictability floor from replicated (shifted) games.
//!
//! Module map:
//!
//! - [`model`]: the consensus update and forward simulation.
//! - [`simulator`]: synthetic populations and control cohorts with known ground truth.
//! - [`datastore`]: judgment files, validation and participant filters.
//! - [`estimation`]: least-squares influenceabilities, EM mixture, linearity test.
//! - [`prediction`]: prediction scenarios, crossvalidation and bootstrap intervals.
//! - [`unpredictability`]: replicate synthesis, control schedule and the std(eta) estimator.
//! - [`analytics`]: descriptive statistics and nonparametric tests.

pub mod analytics;
pub mod datastore;
pub mod error;
pub mod estimation;
pub mod model;
pub mod prediction;
pub mod seed;
pub mod simulator;
pub mod unpredictability;

pub use error::{Error, Result};
pub use model::{GroupState, InfluenceabilityPair, TaskKind};
