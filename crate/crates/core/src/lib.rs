//! Model-calibrated regression for survey samples.
//!
//! A probability sample carries the full set of covariates, while external
//! sources (a census, another survey, a large administrative file) only
//! publish a fit of a smaller "working" regression. This crate imports that
//! partial information by reweighting the internal sample so that the working
//! model's estimating equations hold at an external benchmark, then solves the
//! full model's estimating equations with the calibrated weights.
//!
//! The pieces, bottom-up:
//!
//! - [`domain`]: unit records, samples, estimating functions and the
//!   design-weighted Z-estimator.
//! - [`calibration`]: the empirical-likelihood weight problem and the
//!   two-step calibrated estimator, including stacked multi-source constraints.
//! - [`fusion`]: design-based linearization variances and GLS pooling of an
//!   internal and an external working-model fit.
//! - [`inference`]: sandwich covariances for the calibrated estimator and
//!   Wald intervals.
//! - [`propensity`]: density-ratio propensity weights for a selection-biased
//!   big external sample.
//! - [`cml`]: the constrained maximum likelihood comparison estimator.
//! - [`sim`]: synthetic finite populations, sampling designs and the Monte
//!   Carlo harness.
//! - [`io`]: CSV/JSON/TOML formats and the command runner behind the binary.
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod cml;
pub mod domain;
pub mod error;
pub mod fusion;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod propensity;
pub mod sim;

pub use calibration::{
    calibrated_estimate, multi_source_calibrate, solve_dual_lambda, CalibrationProblem,
    CalibrationResult,
};
pub use domain::{
    eval_score, eval_score_jacobian, ht_total, normalized_weights, solve_weighted_z, Design,
    EstimatingSpec, Family, SummaryStatistic, SurveySample, UnitRecord, Which,
};
pub use error::{Error, Result};
pub use fusion::{estimate_alpha_internal, gls_pool, variance_linearized, PooledBenchmark};
pub use inference::{
    assemble_decomposition, sandwich_estimated_alpha, sandwich_known_alpha, wald_report,
    EstimateReport, VarianceDecomposition, VarianceMode,
};
