use super::{check_positive, check_start, guard, Flow, StepObserver, StepView};
use crate::error::{BilevelError, Result};
use crate::hypergrad::{estimate_hypergrad, HypergradConfig, HypergradSamples};
use crate::numerics::{sample_batch, BatchIndices, RngStream, Vector};
use crate::problems::BilevelOracle;

/// How many recursion steps one inner loop runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InnerLoopReading {
    /// `t = 0, 1, …, m+1`: `m+2` recursion steps, the last `y` update is
    /// dropped so the carried estimators match `(x_{k+1}, y_{k+1})`.
    #[default]
    Literal,
    /// `t = 0, …, m`: `m+1` recursion steps, every `y` update kept.
    MPlusOne,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VrboConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Batch size at epoch resets.
    pub s1: usize,
    /// Batch size inside the inner loop.
    pub s2: usize,
    /// Epoch length `q`.
    pub period: usize,
    pub m_inner: usize,
    pub k: usize,
    /// `η`, `Q` and sampling mode; the batch size field is ignored in
    /// favour of `s1`/`s2`.
    pub hypergrad: HypergradConfig,
    pub x0: Vector,
    pub y0: Vector,
    pub seed: u64,
    pub reading: InnerLoopReading,
    /// Report every inner step to the observer, not only outer steps.
    pub log_inner: bool,
}

impl VrboConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive(self.alpha, "alpha")?;
        check_positive(self.beta, "beta")?;
        check_positive(self.hypergrad.eta, "eta")?;
        if self.period == 0 {
            return Err(BilevelError::invalid("period q must be >= 1"));
        }
        if !(self.s1 >= self.s2 && self.s2 >= 1) {
            return Err(BilevelError::invalid(format!("need S1 >= S2 >= 1 (S1={}, S2={})", self.s1, self.s2)));
        }
        Ok(())
    }

    /// Recursion steps per inner loop.
    pub fn inner_steps(&self) -> usize {
        match self.reading {
            InnerLoopReading::Literal => self.m_inner + 2,
            InnerLoopReading::MPlusOne => self.m_inner + 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VrboState {
    pub k: usize,
    pub x: Vector,
    pub y: Vector,
    pub v: Vector,
    pub u: Vector,
    pub samples_used: u64,
}

impl VrboState {
    pub fn initial(config: &VrboConfig, oracle: &dyn BilevelOracle) -> Result<Self> {
        config.validate()?;
        check_start(oracle, &config.x0, &config.y0)?;
        Ok(VrboState {
            k: 0,
            x: config.x0.clone(),
            y: config.y0.clone(),
            v: Vector::zeros(oracle.outer_dim()),
            u: Vector::zeros(oracle.inner_dim()),
            samples_used: 0,
        })
    }

    pub fn epoch_phase(&self, period: usize) -> usize {
        self.k % period
    }
}

/// Hypergradient and inner gradient at one point on fixed batches.
fn pair(
    oracle: &dyn BilevelOracle,
    hg: &HypergradConfig,
    x: &Vector,
    y: &Vector,
    hyper: &HypergradSamples,
    inner: &BatchIndices,
) -> Result<(Vector, Vector)> {
    Ok((estimate_hypergrad(oracle, x, y, hg, hyper)?, oracle.inner_grad_y(x, y, inner)?))
}

/// One outer step: optional reset, `x` update, then the inner loop on `y`.
pub fn vrbo_outer_step(
    state: &mut VrboState,
    config: &VrboConfig,
    oracle: &dyn BilevelOracle,
    root: &RngStream,
    observer: &mut dyn StepObserver,
) -> Result<Flow> {
    let k = state.k;
    let stream = root.child(&format!("k={k}"));
    if k % config.period == 0 {
        let hg = config.hypergrad.clone().with_batch_size(config.s1);
        let reset = stream.child("reset");
        let hyper = HypergradSamples::draw(oracle, &hg, &reset)?;
        let inner = sample_batch(&mut reset.child("Sy"), oracle.n_inner(), config.s1)?;
        let (v, u) = pair(oracle, &hg, &state.x, &state.y, &hyper, &inner)?;
        state.samples_used += hyper.cost() + inner.len() as u64;
        state.v = v;
        state.u = u;
    }
    let mut flow = observer.observe(&StepView {
        k,
        inner_t: None,
        samples_used: state.samples_used,
        x: &state.x,
        y: &state.y,
        v: Some(&state.v),
        u: Some(&state.u),
    })?;

    let mut x_next = state.x.clone();
    x_next.axpy(-config.alpha, &state.v);
    guard(k, &[&x_next])?;

    let hg = config.hypergrad.clone().with_batch_size(config.s2);
    let steps = config.inner_steps();
    let (mut x_old, mut y_old) = (state.x.clone(), state.y.clone());
    let mut y_cur = state.y.clone();
    let (mut v, mut u) = (state.v.clone(), state.u.clone());
    for t in 0..steps {
        let ts = stream.child(&format!("t={t}"));
        let hyper = HypergradSamples::draw(oracle, &hg, &ts.child("Bx"))?;
        let inner = sample_batch(&mut ts.child("By"), oracle.n_inner(), config.s2)?;
        let (g_new, gy_new) = pair(oracle, &hg, &x_next, &y_cur, &hyper, &inner)?;
        let (g_old, gy_old) = pair(oracle, &hg, &x_old, &y_old, &hyper, &inner)?;
        state.samples_used += 2 * (hyper.cost() + inner.len() as u64);
        v.add_assign(&(&g_new - &g_old));
        u.add_assign(&(&gy_new - &gy_old));
        if config.log_inner && flow == Flow::Continue {
            flow = observer.observe(&StepView {
                k,
                inner_t: Some(t),
                samples_used: state.samples_used,
                x: &x_next,
                y: &y_cur,
                v: Some(&v),
                u: Some(&u),
            })?;
        }
        let last = t + 1 == steps;
        if last && config.reading == InnerLoopReading::Literal {
            break;
        }
        let mut y_new = y_cur.clone();
        y_new.axpy(-config.beta, &u);
        guard(k, &[&y_new, &v, &u])?;
        x_old.clone_from(&x_next);
        y_old = std::mem::replace(&mut y_cur, y_new);
    }
    guard(k, &[&y_cur, &v, &u])?;
    state.x = x_next;
    state.y = y_cur;
    state.v = v;
    state.u = u;
    state.k += 1;
    Ok(flow)
}

/// Runs `K` VRBO outer steps, or fewer if the observer stops early.
pub fn run_vrbo(config: &VrboConfig, oracle: &dyn BilevelOracle, observer: &mut dyn StepObserver) -> Result<VrboState> {
    let mut state = VrboState::initial(config, oracle)?;
    let root = RngStream::new(config.seed, "vrbo");
    while state.k < config.k {
        if vrbo_outer_step(&mut state, config, oracle, &root, observer)? == Flow::Stop {
            break;
        }
    }
    Ok(state)
}
