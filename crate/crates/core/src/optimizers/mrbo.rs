use super::{check_positive, check_start, guard, Flow, StepObserver, StepView};
use crate::error::{BilevelError, Result};
use crate::hypergrad::{estimate_hypergrad_shared, HypergradConfig, HypergradSamples, SamplingMode};
use crate::numerics::{sample_batch, RngStream, Vector};
use crate::problems::BilevelOracle;
use crate::theory::eta_schedule;

/// Step scales, momentum coefficients, schedule constants and estimator
/// settings of MRBO.
#[derive(Clone, Debug, PartialEq)]
pub struct MrboHyperparams {
    /// Outer step scale.
    pub gamma: f64,
    /// Inner step scale.
    pub lambda: f64,
    /// Hypergradient momentum scale: `α_{k+1} = c1 η_k²`.
    pub c1: f64,
    /// Inner-gradient momentum scale: `β_{k+1} = c2 η_k²`.
    pub c2: f64,
    pub m: f64,
    pub d: f64,
    /// Iteration count.
    pub k: usize,
    /// Estimator settings; `batch_size` is the minibatch size `S` used for
    /// both the hypergradient components and the inner gradient.
    pub hypergrad: HypergradConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MrboConfig {
    pub params: MrboHyperparams,
    pub x0: Vector,
    pub y0: Vector,
    pub seed: u64,
    /// Draw fresh batches for the previous-point estimates instead of
    /// reusing the current ones (ablation only).
    pub independent_prev_batches: bool,
}

impl MrboConfig {
    pub fn new(params: MrboHyperparams, x0: Vector, y0: Vector, seed: u64) -> Self {
        MrboConfig {
            params,
            x0,
            y0,
            seed,
            independent_prev_batches: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        check_positive(p.gamma, "gamma")?;
        check_positive(p.lambda, "lambda")?;
        check_positive(p.c1, "c1")?;
        check_positive(p.c2, "c2")?;
        check_positive(p.d, "d")?;
        if !(p.m >= 1.0 && p.m.is_finite()) {
            return Err(BilevelError::invalid(format!("m must be >= 1, got {}", p.m)));
        }
        if p.hypergrad.mode != SamplingMode::SharedBatch {
            return Err(BilevelError::invalid("MRBO uses the shared-batch estimator"));
        }
        if p.hypergrad.batch_size == 0 {
            return Err(BilevelError::invalid("batch size must be >= 1"));
        }
        check_positive(p.hypergrad.eta, "eta")
    }

    /// Momentum weight `α_k` (clamped to 1); `k ≥ 1`.
    pub fn alpha(&self, k: usize) -> f64 {
        let eta = eta_schedule(self.params.d, self.params.m, k - 1);
        (self.params.c1 * eta * eta).min(1.0)
    }

    /// Momentum weight `β_k` (clamped to 1); `k ≥ 1`.
    pub fn beta(&self, k: usize) -> f64 {
        let eta = eta_schedule(self.params.d, self.params.m, k - 1);
        (self.params.c2 * eta * eta).min(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MrboState {
    /// Index of the next step to take.
    pub k: usize,
    pub x: Vector,
    pub y: Vector,
    /// Hypergradient estimator of the last completed step.
    pub v: Vector,
    /// Inner-gradient estimator of the last completed step.
    pub u: Vector,
    pub prev_x: Vector,
    pub prev_y: Vector,
    pub samples_used: u64,
}

impl MrboState {
    pub fn initial(config: &MrboConfig, oracle: &dyn BilevelOracle) -> Result<Self> {
        config.validate()?;
        check_start(oracle, &config.x0, &config.y0)?;
        Ok(MrboState {
            k: 0,
            x: config.x0.clone(),
            y: config.y0.clone(),
            v: Vector::zeros(oracle.outer_dim()),
            u: Vector::zeros(oracle.inner_dim()),
            prev_x: config.x0.clone(),
            prev_y: config.y0.clone(),
            samples_used: 0,
        })
    }
}

struct StepBatches {
    hyper: HypergradSamples,
    inner: crate::numerics::BatchIndices,
}

fn draw(oracle: &dyn BilevelOracle, hg: &HypergradConfig, stream: &RngStream) -> Result<StepBatches> {
    Ok(StepBatches {
        hyper: HypergradSamples::draw(oracle, hg, &stream.child("Bx"))?,
        inner: sample_batch(&mut stream.child("By"), oracle.n_inner(), hg.batch_size)?,
    })
}

fn evaluate(oracle: &dyn BilevelOracle, hg: &HypergradConfig, x: &Vector, y: &Vector, b: &StepBatches) -> Result<(Vector, Vector, u64)> {
    let g = estimate_hypergrad_shared(oracle, x, y, hg, &b.hyper)?;
    let gy = oracle.inner_grad_y(x, y, &b.inner)?;
    Ok((g, gy, b.hyper.cost() + b.inner.len() as u64))
}

/// Computes `v_k`, `u_k` at the current iterate, reports them, then moves
/// to `(x_{k+1}, y_{k+1})`. Returns the observer's verdict.
pub fn mrbo_step(
    state: &mut MrboState,
    config: &MrboConfig,
    oracle: &dyn BilevelOracle,
    root: &RngStream,
    observer: &mut dyn StepObserver,
) -> Result<Flow> {
    let k = state.k;
    let hg = &config.params.hypergrad;
    let stream = root.child(&format!("k={k}"));
    let batches = draw(oracle, hg, &stream)?;
    let (g, gy, cost) = evaluate(oracle, hg, &state.x, &state.y, &batches)?;
    state.samples_used += cost;
    if k == 0 {
        state.v = g;
        state.u = gy;
    } else {
        let prev_batches = if config.independent_prev_batches {
            draw(oracle, hg, &stream.child("prev"))?
        } else {
            batches
        };
        let (g_prev, gy_prev, cost) = evaluate(oracle, hg, &state.prev_x, &state.prev_y, &prev_batches)?;
        state.samples_used += cost;
        let (a, b) = (config.alpha(k), config.beta(k));
        let mut v = &state.v - &g_prev;
        v = v.scale(1.0 - a);
        v.add_assign(&g);
        let mut u = &state.u - &gy_prev;
        u = u.scale(1.0 - b);
        u.add_assign(&gy);
        state.v = v;
        state.u = u;
    }
    let flow = observer.observe(&StepView {
        k,
        inner_t: None,
        samples_used: state.samples_used,
        x: &state.x,
        y: &state.y,
        v: Some(&state.v),
        u: Some(&state.u),
    })?;

    let eta = eta_schedule(config.params.d, config.params.m, k);
    let mut x = state.x.clone();
    x.axpy(-config.params.gamma * eta, &state.v);
    let mut y = state.y.clone();
    y.axpy(-config.params.lambda * eta, &state.u);
    guard(k, &[&x, &y])?;
    state.prev_x = std::mem::replace(&mut state.x, x);
    state.prev_y = std::mem::replace(&mut state.y, y);
    state.k += 1;
    Ok(flow)
}

/// Runs `K` MRBO steps, or fewer if the observer stops early.
pub fn run_mrbo(config: &MrboConfig, oracle: &dyn BilevelOracle, observer: &mut dyn StepObserver) -> Result<MrboState> {
    let mut state = MrboState::initial(config, oracle)?;
    let root = RngStream::new(config.seed, "mrbo");
    while state.k < config.params.k {
        if mrbo_step(&mut state, config, oracle, &root, observer)? == Flow::Stop {
            break;
        }
    }
    Ok(state)
}
