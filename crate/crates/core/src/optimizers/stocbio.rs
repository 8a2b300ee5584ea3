use super::{check_positive, check_start, guard, Flow, StepObserver, StepView};
use crate::error::{BilevelError, Result};
use crate::hypergrad::{estimate_hypergrad_shared, HypergradConfig, HypergradSamples, SamplingMode};
use crate::numerics::{sample_batch, RngStream, Vector};
use crate::problems::BilevelOracle;

/// Double-loop SGD baseline: `T_inner` minibatch SGD steps on `y`, then
/// one minibatch hypergradient step on `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct StocbioConfig {
    pub alpha_out: f64,
    pub beta_in: f64,
    pub t_inner: usize,
    pub k: usize,
    /// Shared-batch estimator settings; `batch_size` is also the inner
    /// SGD batch size.
    pub hypergrad: HypergradConfig,
    pub x0: Vector,
    pub y0: Vector,
    pub seed: u64,
}

impl StocbioConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive(self.alpha_out, "alpha_out")?;
        check_positive(self.beta_in, "beta_in")?;
        check_positive(self.hypergrad.eta, "eta")?;
        if self.t_inner == 0 {
            return Err(BilevelError::invalid("T_inner must be >= 1"));
        }
        if self.hypergrad.mode != SamplingMode::SharedBatch {
            return Err(BilevelError::invalid("stocBiO uses the shared-batch estimator"));
        }
        if self.hypergrad.batch_size == 0 {
            return Err(BilevelError::invalid("batch size must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StocbioState {
    pub k: usize,
    pub x: Vector,
    pub y: Vector,
    /// Last hypergradient estimate.
    pub v: Vector,
    pub samples_used: u64,
}

/// Runs `K` outer steps (fewer if the observer stops). `y` is warm-started
/// from the previous outer step.
pub fn run_stocbio(config: &StocbioConfig, oracle: &dyn BilevelOracle, observer: &mut dyn StepObserver) -> Result<StocbioState> {
    config.validate()?;
    check_start(oracle, &config.x0, &config.y0)?;
    let mut state = StocbioState {
        k: 0,
        x: config.x0.clone(),
        y: config.y0.clone(),
        v: Vector::zeros(oracle.outer_dim()),
        samples_used: 0,
    };
    let root = RngStream::new(config.seed, "stocbio");
    let hg = &config.hypergrad;
    while state.k < config.k {
        let k = state.k;
        let stream = root.child(&format!("k={k}"));
        for t in 0..config.t_inner {
            let batch = sample_batch(&mut stream.child(&format!("t={t}")), oracle.n_inner(), hg.batch_size)?;
            let g = oracle.inner_grad_y(&state.x, &state.y, &batch)?;
            state.samples_used += batch.len() as u64;
            state.y.axpy(-config.beta_in, &g);
            guard(k, &[&state.y])?;
        }
        let samples = HypergradSamples::draw(oracle, hg, &stream.child("Bx"))?;
        state.v = estimate_hypergrad_shared(oracle, &state.x, &state.y, hg, &samples)?;
        state.samples_used += samples.cost();
        let flow = observer.observe(&StepView {
            k,
            inner_t: None,
            samples_used: state.samples_used,
            x: &state.x,
            y: &state.y,
            v: Some(&state.v),
            u: None,
        })?;
        state.x.axpy(-config.alpha_out, &state.v);
        guard(k, &[&state.x])?;
        state.k += 1;
        if flow == Flow::Stop {
            break;
        }
    }
    Ok(state)
}
