//! Stochastic bilevel optimization toolkit.
//!
//! Solves problems of the form `min_x f(x, y*(x))` with
//! `y*(x) = argmin_y g(x, y)`, where both levels are expectations over
//! sampled losses. The crate provides:
//!
//! * [`numerics`]: dense vectors, counter-based random streams, batch
//!   sampling and finite-difference oracles.
//! * [`problems`]: the [`problems::BilevelOracle`] interface with a
//!   strongly-convex quadratic family (analytic ground truth) and a data
//!   hyper-cleaning family (weighted binary logistic regression).
//! * [`hypergrad`]: truncated Neumann-series hypergradient estimators built
//!   from Hessian-vector and Jacobian-vector products only.
//! * [`optimizers`]: MRBO (recursive momentum), VRBO (recursive variance
//!   reduction with periodic large batches) and a double-loop SGD baseline.
//! * [`theory`]: smoothness/variance constants, theorem-prescribed
//!   hyperparameters and convergence diagnostics.
//! * [`harness`]: config files, experiment grids and CSV traces.

pub mod error;
pub mod harness;
pub mod hypergrad;
pub mod numerics;
pub mod optimizers;
pub mod problems;
pub mod theory;

pub use error::{BilevelError, Result};
pub use numerics::{BatchIndices, RngStream, Vector};
pub use problems::BilevelOracle;
