//! Optimization drivers. Each driver is a deterministic function of its
//! config and seed and reports progress through a [`StepObserver`].

mod mrbo;
mod stocbio;
mod vrbo;

pub use mrbo::{mrbo_step, run_mrbo, MrboConfig, MrboHyperparams, MrboState};
pub use stocbio::{run_stocbio, StocbioConfig, StocbioState};
pub use vrbo::{run_vrbo, vrbo_outer_step, InnerLoopReading, VrboConfig, VrboState};

pub use crate::theory::eta_schedule;

use crate::error::{BilevelError, Result};
use crate::numerics::Vector;

/// Iterates with a norm above this abort the run.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// What a driver exposes to its observer at one step.
///
/// `x`, `y` are the iterate the estimators `v`, `u` were computed at;
/// `samples_used` counts every single-sample oracle call so far,
/// including those that produced `v` and `u`.
#[derive(Clone, Copy, Debug)]
pub struct StepView<'a> {
    pub k: usize,
    /// Inner-loop index for VRBO inner rows, `None` for outer rows.
    pub inner_t: Option<usize>,
    pub samples_used: u64,
    pub x: &'a Vector,
    pub y: &'a Vector,
    pub v: Option<&'a Vector>,
    pub u: Option<&'a Vector>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

pub trait StepObserver {
    fn observe(&mut self, view: &StepView<'_>) -> Result<Flow>;
}

/// Ignores every step.
pub struct NoObserver;

impl StepObserver for NoObserver {
    fn observe(&mut self, _view: &StepView<'_>) -> Result<Flow> {
        Ok(Flow::Continue)
    }
}

impl<F: FnMut(&StepView<'_>) -> Result<Flow>> StepObserver for F {
    fn observe(&mut self, view: &StepView<'_>) -> Result<Flow> {
        self(view)
    }
}

pub(crate) fn guard(step: usize, vs: &[&Vector]) -> Result<()> {
    for v in vs {
        let norm = v.norm();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(BilevelError::Divergence { step, norm });
        }
    }
    Ok(())
}

pub(crate) fn check_positive(value: f64, what: &str) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(BilevelError::invalid(format!("{what} must be positive and finite, got {value}")))
    }
}

pub(crate) fn check_start(oracle: &dyn crate::problems::BilevelOracle, x0: &Vector, y0: &Vector) -> Result<()> {
    x0.ensure_dim(oracle.outer_dim(), "x0")?;
    y0.ensure_dim(oracle.inner_dim(), "y0")?;
    x0.ensure_finite("x0")?;
    y0.ensure_finite("y0")
}
