//! Conditional Bayesian inference for latent Gaussian models.
//!
//! A Laplace fitter handles the model once a small set of parameters `z_c`
//! is fixed; importance sampling, adaptive multiple importance sampling or
//! Metropolis-Hastings then explore `z_c`, and the conditional fits are
//! mixed back into joint posterior marginals.

pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod fitter;
pub mod gmrf;
pub mod marginals;
pub mod math;
pub mod models;
pub mod samplers;
