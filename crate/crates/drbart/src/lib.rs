//! Bayesian density regression with additive tree ensembles.
//!
//! The model writes a response as y = f(x, u) + exp(v(x, u)/2) * e with a
//! uniform auxiliary coordinate u and Gaussian noise e, where f and v are
//! sums of regression trees that may split on the covariates and on u.
//! Integrating u out makes the conditional law of y given x a continuous
//! location-scale mixture of normals, so the fitted object is a full
//! predictive density, not just a mean surface.
//!
//! Crate layout:
//! - [`tree`]: axis-aligned binary trees, ensembles, step-function views
//!   along the latent coordinate;
//! - [`priors`]: branching-process tree prior, leaf calibrations;
//! - [`special`]: log-domain Bessel K, generalized inverse Gaussian draws,
//!   log-space reductions;
//! - [`sampler`]: the Markov chain (tree moves, leaf updates, latent
//!   updates, variance updates);
//! - [`predict`]: predictive densities, quantiles, highest-density regions;
//! - [`simbench`]: synthetic data generators, distance metrics, and the
//!   prior/posterior self-consistency harness;
//! - [`io`] and [`cli`]: dataset loading, draw serialization, command line.

pub mod cli;
pub mod data;
pub mod io;
pub mod predict;
pub mod priors;
pub mod sampler;
pub mod simbench;
pub mod special;
pub mod tree;
