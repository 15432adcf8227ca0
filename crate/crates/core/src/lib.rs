//! Survival trees and forests for length-biased right-censored (LBRC) data.
//!
//! A prevalent-cohort sample observes a subject only if its failure time
//! exceeds the delay between disease onset and study enrollment. When onset
//! follows a stationary Poisson process the observed failure times are
//! length-biased, and estimators built for plain left-truncated data leave
//! efficiency on the table because they ignore the truncation-time
//! distribution.
//!
//! This crate provides:
//!
//! - one-sample survival estimators for LBRC data: the risk-set adjusted
//!   Kaplan-Meier for left-truncated right-censored data ([`estimators::km_ltrc`]),
//!   the nonparametric maximum full-likelihood estimator computed by EM
//!   ([`estimators::mfle`]), and the closed-form composite conditional-likelihood
//!   estimator ([`estimators::mcle`]), all accepting case weights;
//! - per-subject influence scores derived from the conditional and full
//!   likelihoods ([`scores`]);
//! - conditional-inference survival trees with permutation-test based,
//!   selection-unbiased splitting ([`cit`]);
//! - bootstrap forests with nearest-neighbor weights and out-of-bag
//!   `mtry` tuning by integrated Brier score ([`cif`]);
//! - evaluation metrics and a simulation harness for benchmarking
//!   ([`eval`], [`simgen`], [`experiment`]).

pub mod cif;
pub mod cit;
pub mod curves;
pub mod dataset;
pub mod estimators;
pub mod eval;
pub mod experiment;
pub mod model_io;
pub mod rng;
pub mod scores;
pub mod simgen;
