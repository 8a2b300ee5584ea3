use std::sync::atomic::{AtomicU64, Ordering};

use super::{BilevelOracle, Split};
use crate::error::Result;
use crate::numerics::{BatchIndices, Vector};

/// Wraps an oracle and tallies single-sample evaluations.
///
/// Every batched gradient, Hessian-vector, Jacobian-vector or outer-gradient
/// call adds `|batch|`. Full-population losses and exact solves are free.
pub struct CountingOracle<'a> {
    inner: &'a dyn BilevelOracle,
    calls: AtomicU64,
}

impl<'a> CountingOracle<'a> {
    pub fn new(inner: &'a dyn BilevelOracle) -> Self {
        CountingOracle {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    fn tally(&self, batch: &BatchIndices) {
        self.calls.fetch_add(batch.len() as u64, Ordering::Relaxed);
    }
}

impl BilevelOracle for CountingOracle<'_> {
    fn outer_dim(&self) -> usize {
        self.inner.outer_dim()
    }
    fn inner_dim(&self) -> usize {
        self.inner.inner_dim()
    }
    fn n_outer(&self) -> usize {
        self.inner.n_outer()
    }
    fn n_inner(&self) -> usize {
        self.inner.n_inner()
    }
    fn has_exact_inner_solution(&self) -> bool {
        self.inner.has_exact_inner_solution()
    }
    fn has_analytic_hypergradient(&self) -> bool {
        self.inner.has_analytic_hypergradient()
    }
    fn strong_convexity(&self) -> Option<f64> {
        self.inner.strong_convexity()
    }
    fn inner_smoothness(&self) -> Option<f64> {
        self.inner.inner_smoothness()
    }

    fn inner_grad_y(&self, x: &Vector, y: &Vector, batch: &BatchIndices) -> Result<Vector> {
        self.tally(batch);
        self.inner.inner_grad_y(x, y, batch)
    }

    fn inner_hvp_yy(&self, x: &Vector, y: &Vector, v: &Vector, batch: &BatchIndices) -> Result<Vector> {
        self.tally(batch);
        self.inner.inner_hvp_yy(x, y, v, batch)
    }

    fn inner_jvp_xy(&self, x: &Vector, y: &Vector, v: &Vector, batch: &BatchIndices) -> Result<Vector> {
        self.tally(batch);
        self.inner.inner_jvp_xy(x, y, v, batch)
    }

    fn outer_grads(&self, x: &Vector, y: &Vector, batch: &BatchIndices) -> Result<(Vector, Vector)> {
        self.tally(batch);
        self.inner.outer_grads(x, y, batch)
    }

    fn loss(&self, x: &Vector, y: &Vector, split: Split) -> Result<f64> {
        self.inner.loss(x, y, split)
    }

    fn solve_inner_exact(&self, x: &Vector) -> Result<Vector> {
        self.inner.solve_inner_exact(x)
    }

    fn analytic_hypergrad(&self, x: &Vector) -> Result<Vector> {
        self.inner.analytic_hypergrad(x)
    }
}
