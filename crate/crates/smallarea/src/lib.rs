//! Small-area estimation toolkit.
//!
//! Direct survey estimates for small domains are unreliable: the survey was
//! designed for precision at a higher level of aggregation. This crate
//! implements the standard model-based remedy, shrinking each direct
//! estimate toward a regression fit built from auxiliary data, and ships the
//! machinery needed to use such estimates in production:
//!
//! * [`fay_herriot`] — the area-level random-effects model: GLS regression,
//!   four variance-component estimators, EBLUP / empirical-Bayes point
//!   estimates, the James–Stein balanced case, and a general-covariance
//!   variant.
//! * [`uncertainty`] — second-order-unbiased MSE estimators, Morris'
//!   approximation to the posterior variance, and the general-covariance
//!   plug-in MSE.
//! * [`hb`] — hierarchical Bayes with a flat prior on the between-area
//!   variance, computed by adaptive one-dimensional quadrature (no MCMC).
//! * [`intervals`] — empirical-Bayes confidence intervals with coverage
//!   corrections, plus a Monte Carlo coverage simulator.
//! * [`unit_level`] — the nested-error regression model for unit-level data:
//!   ANOVA variance components, BLUP/EBLUP of area and finite-population
//!   means, second-order MSE, and hierarchical Bayes via quadrature.
//! * [`numeric`] — the self-contained kernels behind all of the above:
//!   symmetric solves, Brent root finding, adaptive Gauss–Kronrod
//!   quadrature, normal distribution functions and seeded RNG streams.
//!
//! The `smallarea` binary exposes batch fitting, interval construction,
//! coverage simulation and a reproduction harness over CSV files; see the
//! crate examples for library usage.

// Negated comparisons like !(x > 0.0) reject NaN where x <= 0.0 would let
// it through; quadrature/quantile constants keep their full published
// digits; index loops mirror the matrix algebra they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::excessive_precision)]
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod fay_herriot;
pub mod hb;
pub mod intervals;
pub mod numeric;
pub mod repro;
pub mod uncertainty;
pub mod unit_level;

mod posterior1d;

pub use error::{Error, Result};
pub use fay_herriot::{AreaDataset, FayHerriotFit, FhMethod, GeneralVModel};
pub use uncertainty::MseDecomposition;
