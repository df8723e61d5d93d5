//! Simulation toolkit for comparing outcome codings of violence-frequency
//! survey items in randomized trials.
//!
//! Control-arm counts for several acts come from zero-inflated count
//! marginals coupled by a Gaussian copula, or from resampled survey rows.
//! Treatment effects are applied through per-unit response types, outcomes
//! are coded as a binary any-act indicator or a normalized category sum, and
//! effects are estimated by difference in means with HC2 standard errors.

pub mod coding;
pub mod count_models;
pub mod error;
pub mod estimation;
pub mod ingest;
pub mod matrix;
pub mod mc_harness;
pub mod multivariate;
mod optim;
pub mod potential_outcomes;
pub mod stats;

pub use coding::{categorize, code_binary, code_sum, CodedOutcomes};
pub use count_models::{Family, MarginalParams};
pub use error::{Error, Result};
pub use estimation::{estimate_ols_hc2, reject_null, EstimateResult};
pub use matrix::CountMatrix;
pub use mc_harness::{run_simulation, Coding, OutcomeSource, PerformanceStats, SimulationConfig};
pub use multivariate::{default_model, CorrelationMatrix, JointSampler, MultiActModel};
pub use potential_outcomes::{EffectScenario, TargetSet};
