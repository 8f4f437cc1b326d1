//! Pseudo-marginal MCMC with online tuning of the particle count.
//!
//! The [`adaptation`] controller adjusts the number of particles `N` every
//! epoch so the log-likelihood estimator's noise tracks a target standard
//! deviation; [`tuner`] implements the non-adaptive alternative (preliminary
//! run, Monte Carlo noise estimate, bisection on `N`, final run). Two
//! reference models are included: a latent Gaussian model with a closed-form
//! likelihood ([`synthetic`]) and a logistic random-intercept model
//! ([`glmm`]).

// `!(x > 0.0)` is used on purpose so NaN falls on the rejecting side.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod glmm;
pub mod kernel;
pub mod model;
pub mod numeric;
pub mod param;
pub mod proposal;
pub mod rng;
pub mod samplers;
pub mod synthetic;
pub mod trace;
pub mod tuner;

pub use error::{Error, Result};
pub use model::{EstimateWithAux, Model};
pub use param::ParamVector;
pub use rng::RngStream;
