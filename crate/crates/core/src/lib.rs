//! Nonparametric estimation of potential-outcome distributions under a
//! continuous treatment.
//!
//! The estimator runs in three steps:
//!
//! 1. a first stage produces a generated regressor `V̂` (a generalized
//!    propensity score, a control variable, or observed covariates),
//! 2. a local polynomial regression of `1{Y ≤ y}` (or `Y`) on `(T, V̂)`,
//! 3. a trimmed, weighted average of that regression over the sample at a
//!    fixed treatment level `t`.
//!
//! On top of the resulting process `θ̂_t(y)` the crate provides mean and
//! quantile dose-response functionals, bounds for control-variable models,
//! influence-function standard errors and multiplier-bootstrap uniform
//! bands, and a simulation harness with analytic oracles.
//!
//! The crate is `no_std` (with `alloc`) when built without the default
//! `std` feature. The `parallel` feature evaluates treatment grids, bootstrap
//! draws and Monte Carlo replications on the rayon pool; results are
//! bit-identical to the sequential build.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is used on purpose so NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod error;
pub mod first_stage;
pub mod functionals;
pub mod inference;
pub mod kernel;
pub mod math;
pub mod partial_mean;
pub mod rng;
pub mod sample;
pub mod sim;
pub mod smoothing;
pub mod trimming;

mod par;

pub use error::{Error, Result};
pub use kernel::{KernelFamily, KernelSpec};
pub use math::Matrix;
pub use sample::Sample;
pub use smoothing::{DesignPoint, LocalOrder, RegressionFit};
