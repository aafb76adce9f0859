//! Balanced Q-learning for two-stage dynamic treatment regimes that weigh
//! outcome utility against treatment-assignment and covariate-assessment
//! costs.
//!
//! The crate provides:
//!
//! - domain types and dataset handling ([`data`]);
//! - a deterministic least-squares engine ([`regress`]);
//! - cross-fitted nuisance estimation with ridge, random-forest, and
//!   discrete super-learner base learners ([`nuisance`]);
//! - the balanced Q-learning estimation pipeline ([`bql`]);
//! - sequential deployment of a fitted regime against a covariate oracle
//!   ([`deploy`]);
//! - a synthetic-trial engine with scenario presets and Monte Carlo profit
//!   evaluation ([`synth`]);
//! - exact small-instance oracles and off-policy evaluation ([`eval`]);
//! - dense and sparse cost-adjusted comparator regimes ([`baselines`]);
//! - plug-in covariance estimation and confidence intervals ([`infer`]);
//! - a configuration-driven experiment runner ([`experiment`]).

pub mod baselines;
pub mod bql;
pub mod data;
pub mod deploy;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod infer;
pub mod nuisance;
pub mod regime;
pub mod regress;
pub mod seed;
pub mod synth;

pub use data::{
    assemble_design, read_dataset_csv, subvector, validate_dataset, write_dataset_csv,
    AssessmentCatalog, CostSpec, Dataset, FeatureIndexSet, Trajectory, Violation,
};
pub use error::{Error, Result};
