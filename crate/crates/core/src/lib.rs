//! A laboratory for quickest change detection with CUSUM detectors.
//!
//! The crate has three layers:
//!
//! - **Models and the detector** ([`model`], [`cusum`]): pre/post-change
//!   observation laws, change-time laws with geometric tails, statistic
//!   function classes, and the reflected-random-walk detector with its
//!   pathwise Bayesian loss (delay plus `kappa` times eagerness).
//! - **Analysis** ([`asymptotics`], [`optimizer`], [`metastable`]):
//!   cumulant functions and exponential tilting, the convex-dual rate
//!   function, the eagerness exponent and its Laplace-method cost and
//!   threshold approximations, optimization of the statistic over linear
//!   function classes, and Perron-Frobenius analysis of hidden-chain models
//!   where the change time is an absorption time.
//! - **Experiments** ([`harness`]): seeded Monte Carlo cost estimation, a
//!   rare-event hitting-time estimator with exponential tilting, an exact
//!   dynamic-programming oracle for lattice statistics, threshold sweeps,
//!   and the config-file/CLI surface.

pub mod asymptotics;
pub mod config;
pub mod cusum;
pub mod error;
pub mod harness;
pub mod metastable;
pub mod model;
pub mod numerics;
pub mod optimizer;
pub mod presets;

pub use error::{Error, Result};
