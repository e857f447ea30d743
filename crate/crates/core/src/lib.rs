//! Nuclear-norm penalized subspace identification of ARMA models.
//!
//! The crate covers the full chain from a simulated trajectory to an estimated
//! state-space model, together with closed-form evaluation of the quantities in
//! the non-asymptotic error bound for the estimator and Monte Carlo oracles that
//! check each of them:
//!
//! - [`arma`]: ARMA and innovations-form models, simulation, spectra, covariances.
//! - [`hankel`]: past/future/noise Hankel matrices and the structured matrices
//!   `𝒪`, `𝒦`, `𝒩` linking them.
//! - [`solver`]: least squares, nuclear-norm penalized and constrained estimators.
//! - [`realization`]: order selection and factorization of the estimate into `(A, B, K)`.
//! - [`theory`]: the scalar quantities of the error bound.
//! - [`montecarlo`]: stochastic oracles and end-to-end estimation experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::too_many_arguments)]

pub mod arma;
pub mod error;
pub mod hankel;
pub mod io;
pub mod montecarlo;
pub mod numerics;
pub mod realization;
pub mod rng;
pub mod solver;
pub mod theory;

pub use arma::{ArmaModel, CovarianceModel, StateSpaceModel, Trajectory};
pub use error::{Error, Result};
