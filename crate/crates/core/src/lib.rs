//! Estimation of the unobservable mean outcome of a treated (blocked) group
//! from observational data: matching, inverse propensity weighting, and
//! regression estimators with bootstrap confidence intervals, plus the
//! simulation and empirical study machinery behind them.

pub mod bootstrap;
pub mod cli;
pub mod dataset;
pub mod empirical;
pub mod error;
pub mod estimators;
pub mod models;
pub mod report;
pub mod rng;
pub mod simgen;

pub use dataset::{GroundTruth, Matrix, ObservationalDataset};
pub use error::{Error, Result};
pub use estimators::{EstimateResult, EstimatorConfig, EstimatorId, MatchMode};
pub use models::{FitConfig, WeightFormula};
