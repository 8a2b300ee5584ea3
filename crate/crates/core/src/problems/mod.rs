//! The bilevel oracle interface and the concrete problem families.
//!
//! Every family exposes the same five stochastic evaluations. Each takes a
//! minibatch of sample indices and returns the batch mean, accumulated in
//! index order.

mod counting;
mod dataset;
mod hyperclean;
mod quadratic;

use std::str::FromStr;

pub use counting::CountingOracle;
pub use dataset::{generate_hyperclean_dataset, load_dataset_csv, write_dataset_csv, Dataset, SplitTag};
pub use hyperclean::{fit_weighted_ridge_logistic, make_hyperclean_problem, HypercleanProblem, HypercleanSpec};
pub use quadratic::{make_quadratic_problem, QuadraticParts, QuadraticProblem, QuadraticSpec};

use crate::error::{BilevelError, Result};
use crate::numerics::{BatchIndices, Vector};

/// Which objective `eval_losses` reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    /// Inner objective `g(x, y)`.
    Train,
    /// Outer objective `f(x, y)`.
    Validation,
    /// Held-out copy of the outer objective.
    Test,
}

impl FromStr for Split {
    type Err = BilevelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(BilevelError::invalid(format!("unknown split '{other}'"))),
        }
    }
}

/// Stochastic first-order and second-order-product access to a bilevel
/// problem `min_x f(x, y*(x))`, `y*(x) = argmin_y g(x, y)`.
///
/// `f = E_ξ F(x, y; ξ)` over `n_outer` samples and `g = E_ζ G(x, y; ζ)`
/// over `n_inner` samples. All evaluations are deterministic functions of
/// `(x, y, batch)`.
pub trait BilevelOracle: Send + Sync {
    /// Dimension `p` of the outer variable.
    fn outer_dim(&self) -> usize;
    /// Dimension `q` of the inner variable.
    fn inner_dim(&self) -> usize;
    /// Population size for the outer samples ξ.
    fn n_outer(&self) -> usize;
    /// Population size for the inner samples ζ.
    fn n_inner(&self) -> usize;

    fn has_exact_inner_solution(&self) -> bool {
        false
    }

    fn has_analytic_hypergradient(&self) -> bool {
        false
    }

    /// Strong convexity constant of every `G(x, ·; ζ)`, when known.
    fn strong_convexity(&self) -> Option<f64> {
        None
    }

    /// Upper bound on the spectrum of every `∇²_y G(x, y; ζ)`, when known.
    fn inner_smoothness(&self) -> Option<f64> {
        None
    }

    /// Batch mean of `∇_y G(x, y; ζ)`.
    fn inner_grad_y(&self, x: &Vector, y: &Vector, batch: &BatchIndices) -> Result<Vector>;

    /// Batch mean of `∇²_y G(x, y; ζ) · v`.
    fn inner_hvp_yy(&self, x: &Vector, y: &Vector, v: &Vector, batch: &BatchIndices) -> Result<Vector>;

    /// Batch mean of `∇_x∇_y G(x, y; ζ) · v`, a vector in the outer space.
    fn inner_jvp_xy(&self, x: &Vector, y: &Vector, v: &Vector, batch: &BatchIndices) -> Result<Vector>;

    /// Batch means of `(∇_x F, ∇_y F)` over outer samples.
    fn outer_grads(&self, x: &Vector, y: &Vector, batch: &BatchIndices) -> Result<(Vector, Vector)>;

    /// Full-population objective on `split`.
    fn loss(&self, x: &Vector, y: &Vector, split: Split) -> Result<f64>;

    /// `y*(x)` by a direct solve.
    fn solve_inner_exact(&self, _x: &Vector) -> Result<Vector> {
        Err(BilevelError::unsupported("oracle has no exact inner solution"))
    }

    /// `∇Φ(x)` evaluated at `y*(x)` with exact linear solves.
    fn analytic_hypergrad(&self, _x: &Vector) -> Result<Vector> {
        Err(BilevelError::unsupported("oracle has no analytic hypergradient"))
    }
}

/// Shared argument validation for oracle implementations.
pub(crate) fn check_point(oracle: &dyn BilevelOracle, x: &Vector, y: &Vector) -> Result<()> {
    x.ensure_dim(oracle.outer_dim(), "outer variable x")?;
    y.ensure_dim(oracle.inner_dim(), "inner variable y")
}

pub(crate) fn check_inner_batch(oracle: &dyn BilevelOracle, batch: &BatchIndices) -> Result<()> {
    batch.ensure_source(oracle.n_inner(), "inner batch")
}

pub(crate) fn check_outer_batch(oracle: &dyn BilevelOracle, batch: &BatchIndices) -> Result<()> {
    batch.ensure_source(oracle.n_outer(), "outer batch")
}

pub(crate) fn finite(v: Vector, what: &str) -> Result<Vector> {
    v.ensure_finite(what)?;
    Ok(v)
}
