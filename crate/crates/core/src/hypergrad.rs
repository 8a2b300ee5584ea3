//! Truncated Neumann-series hypergradient estimation.
//!
//! The inverse inner Hessian is replaced by `η Σ_{j=0..Q} (I − ηH)^j`, applied
//! to `∇_y F` through a recursion of Hessian-vector products
//! `r_{j+1} = r_j − η H_{Q−j} r_j`, followed by one Jacobian-vector product:
//!
//! ```text
//! ĝ = ∇_x F − ∇_x∇_y G · η Σ_j r_j
//! ```
//!
//! Two sampling conventions are supported. In shared-batch mode the outer
//! gradients, the Jacobian product and each Hessian factor use one minibatch
//! each (`Q + 2` batches). In per-sample mode every sample index `i` owns a
//! full single-sample chain and the chains are averaged.

use log::warn;

use crate::error::{BilevelError, Result};
use crate::numerics::{sample_batch, BatchIndices, RngStream, Vector};
use crate::problems::BilevelOracle;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingMode {
    SharedBatch,
    PerSample,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypergradConfig {
    /// Neumann step `η`.
    pub eta: f64,
    /// Number of Hessian-vector terms `Q`.
    pub q: usize,
    pub mode: SamplingMode,
    /// Size of each component batch (shared mode) or number of chains.
    pub batch_size: usize,
}

impl HypergradConfig {
    pub fn new(eta: f64, q: usize, mode: SamplingMode, batch_size: usize) -> Self {
        HypergradConfig { eta, q, mode, batch_size }
    }

    /// `η = 1 / (2 L_inner)`.
    pub fn default_eta(l_inner: f64) -> f64 {
        0.5 / l_inner
    }

    /// Rejects `η ≤ 0` or an empty batch; warns when `η L_inner ≥ 1`.
    pub fn validate(&self, l_inner: Option<f64>) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(BilevelError::invalid(format!("Neumann step eta must be positive, got {}", self.eta)));
        }
        if self.batch_size == 0 {
            return Err(BilevelError::invalid("hypergradient batch size must be >= 1"));
        }
        if let Some(l) = l_inner {
            if self.eta * l >= 1.0 {
                warn!("eta * L_inner = {} >= 1: Neumann series may not contract", self.eta * l);
            }
        }
        Ok(())
    }

    pub fn with_mode(mut self, mode: SamplingMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }
}

/// Sample indices consumed by one hypergradient estimate.
///
/// Shared mode: `outer` is `B_F`, `jvp` is `B_G`, `hessian[j]` is `B_{j+1}`.
/// Per-sample mode: chain `i` uses `outer[i]` (ξ_i), `jvp[i]` (ζ_i) and
/// `hessian[j][i]` (ζ_i^{j+1}).
#[derive(Clone, Debug, PartialEq)]
pub struct HypergradSamples {
    pub mode: SamplingMode,
    pub outer: BatchIndices,
    pub jvp: BatchIndices,
    pub hessian: Vec<BatchIndices>,
}

impl HypergradSamples {
    /// Draws every component from its own labelled child of `stream`.
    pub fn draw(oracle: &dyn BilevelOracle, config: &HypergradConfig, stream: &RngStream) -> Result<Self> {
        let s = config.batch_size;
        let outer = sample_batch(&mut stream.child("BF"), oracle.n_outer(), s)?;
        let jvp = sample_batch(&mut stream.child("BG"), oracle.n_inner(), s)?;
        let hessian = (1..=config.q)
            .map(|j| sample_batch(&mut stream.child(&format!("B{j}")), oracle.n_inner(), s))
            .collect::<Result<Vec<_>>>()?;
        Ok(HypergradSamples {
            mode: config.mode,
            outer,
            jvp,
            hessian,
        })
    }

    /// Every component set to the full population (the expectation form).
    pub fn population(oracle: &dyn BilevelOracle, q: usize) -> Self {
        HypergradSamples {
            mode: SamplingMode::SharedBatch,
            outer: BatchIndices::full(oracle.n_outer()),
            jvp: BatchIndices::full(oracle.n_inner()),
            hessian: vec![BatchIndices::full(oracle.n_inner()); q],
        }
    }

    pub fn batch_count(&self) -> usize {
        self.hessian.len() + 2
    }

    /// Single-sample evaluations an estimate over these samples performs.
    pub fn cost(&self) -> u64 {
        (self.outer.len() + self.jvp.len() + self.hessian.iter().map(BatchIndices::len).sum::<usize>()) as u64
    }
}

/// Runs the Hessian-vector recursion and returns `M_Q = η Σ_{j=0..Q} r_j`
/// together with the sequence `r_0..r_Q`.
///
/// Step `j` applies the Hessian on `hessian_batches[Q − 1 − j]`, i.e. the
/// last batch first.
pub fn neumann_vector(
    oracle: &dyn BilevelOracle,
    x: &Vector,
    y: &Vector,
    r0: &Vector,
    eta: f64,
    hessian_batches: &[BatchIndices],
) -> Result<(Vector, Vec<Vector>)> {
    if !(eta > 0.0) {
        return Err(BilevelError::invalid(format!("Neumann step eta must be positive, got {eta}")));
    }
    r0.ensure_dim(oracle.inner_dim(), "Neumann start vector")?;
    let q = hessian_batches.len();
    let mut trace = Vec::with_capacity(q + 1);
    trace.push(r0.clone());
    for j in 0..q {
        let r = &trace[j];
        let hv = oracle.inner_hvp_yy(x, y, r, &hessian_batches[q - 1 - j])?;
        let mut next = r.clone();
        next.axpy(-eta, &hv);
        trace.push(next);
    }
    let mut sum = Vector::zeros(r0.dim());
    for r in &trace {
        sum.add_assign(r);
    }
    let m = sum.scale(eta);
    m.ensure_finite("Neumann vector")?;
    Ok((m, trace))
}

fn check_samples(config: &HypergradConfig, samples: &HypergradSamples, want: SamplingMode) -> Result<()> {
    if config.mode != want || samples.mode != want {
        return Err(BilevelError::invalid(format!(
            "estimator for {want:?} called with config mode {:?} and samples mode {:?}",
            config.mode, samples.mode
        )));
    }
    if samples.hessian.len() != config.q {
        return Err(BilevelError::invalid(format!(
            "expected {} Hessian batches, got {}",
            config.q,
            samples.hessian.len()
        )));
    }
    Ok(())
}

fn single_chain(
    oracle: &dyn BilevelOracle,
    x: &Vector,
    y: &Vector,
    eta: f64,
    outer: &BatchIndices,
    jvp: &BatchIndices,
    hessian: &[BatchIndices],
) -> Result<Vector> {
    let (gx, gy) = oracle.outer_grads(x, y, outer)?;
    let (m_q, _) = neumann_vector(oracle, x, y, &gy, eta, hessian)?;
    let cross = oracle.inner_jvp_xy(x, y, &m_q, jvp)?;
    Ok(&gx - &cross)
}

/// Shared-batch estimator: `∇_x F(B_F) − ∇_x∇_y G(B_G) · M_Q` with
/// `M_Q` from the recursion started at `∇_y F(B_F)` over `B_1..B_Q`.
pub fn estimate_hypergrad_shared(
    oracle: &dyn BilevelOracle,
    x: &Vector,
    y: &Vector,
    config: &HypergradConfig,
    samples: &HypergradSamples,
) -> Result<Vector> {
    check_samples(config, samples, SamplingMode::SharedBatch)?;
    single_chain(oracle, x, y, config.eta, &samples.outer, &samples.jvp, &samples.hessian)
}

/// Per-sample estimator: the average of `S₁` independent single-sample
/// chains, reduced in chain order.
pub fn estimate_hypergrad_per_sample(
    oracle: &dyn BilevelOracle,
    x: &Vector,
    y: &Vector,
    config: &HypergradConfig,
    samples: &HypergradSamples,
) -> Result<Vector> {
    check_samples(config, samples, SamplingMode::PerSample)?;
    let s1 = samples.outer.len();
    if s1 == 0 || samples.jvp.len() != s1 || samples.hessian.iter().any(|b| b.len() != s1) {
        return Err(BilevelError::invalid("per-sample mode needs equally sized component batches"));
    }
    let mut acc = Vector::zeros(oracle.outer_dim());
    let mut chain = Vec::with_capacity(config.q);
    for i in 0..s1 {
        let outer = BatchIndices::single(samples.outer.indices()[i], samples.outer.source_size());
        let jvp = BatchIndices::single(samples.jvp.indices()[i], samples.jvp.source_size());
        chain.clear();
        chain.extend(
            samples
                .hessian
                .iter()
                .map(|b| BatchIndices::single(b.indices()[i], b.source_size())),
        );
        acc.add_assign(&single_chain(oracle, x, y, config.eta, &outer, &jvp, &chain)?);
    }
    Ok(acc.div_scalar(s1 as f64))
}

/// Dispatches on `config.mode`.
pub fn estimate_hypergrad(
    oracle: &dyn BilevelOracle,
    x: &Vector,
    y: &Vector,
    config: &HypergradConfig,
    samples: &HypergradSamples,
) -> Result<Vector> {
    match config.mode {
        SamplingMode::SharedBatch => estimate_hypergrad_shared(oracle, x, y, config, samples),
        SamplingMode::PerSample => estimate_hypergrad_per_sample(oracle, x, y, config, samples),
    }
}

/// Deterministic truncated-series hypergradient `∇̄Φ(x, y)`: every
/// component evaluated on the full population.
pub fn expected_hypergrad(oracle: &dyn BilevelOracle, x: &Vector, y: &Vector, eta: f64, q: usize) -> Result<Vector> {
    let samples = HypergradSamples::population(oracle, q);
    single_chain(oracle, x, y, eta, &samples.outer, &samples.jvp, &samples.hessian)
}

/// Truncation bias bound `C_Q = (1 − ημ)^{Q+1} M L / μ`.
pub fn bias_bound_cq(mu: f64, m: f64, l: f64, eta: f64, q: usize) -> Result<f64> {
    if !(mu > 0.0 && eta > 0.0 && eta * mu < 1.0) {
        return Err(BilevelError::invalid(format!(
            "bias bound needs 0 < eta*mu < 1 (eta={eta}, mu={mu})"
        )));
    }
    Ok((1.0 - eta * mu).powi(q as i32 + 1) * m * l / mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::QuadraticProblem;

    fn scalar_instance() -> QuadraticProblem {
        QuadraticProblem::scalar_instance(0.0, 4, 0).unwrap()
    }

    fn v1(a: f64) -> Vector {
        Vector::from(vec![a])
    }

    #[test]
    fn neumann_geometric_sequence() {
        let p = scalar_instance();
        let batches = vec![BatchIndices::full(4); 2];
        let (m, r) = neumann_vector(&p, &v1(0.0), &v1(0.0), &v1(1.0), 0.5, &batches).unwrap();
        assert_eq!(r, vec![v1(1.0), v1(0.5), v1(0.25)]);
        assert_eq!(m, v1(0.875));
    }

    #[test]
    fn neumann_q_zero_and_zero_start() {
        let p = scalar_instance();
        let (m, r) = neumann_vector(&p, &v1(0.0), &v1(0.0), &v1(3.0), 0.25, &[]).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(m, v1(0.75));
        let batches = vec![BatchIndices::full(4); 5];
        let (m, _) = neumann_vector(&p, &v1(0.0), &v1(0.0), &v1(0.0), 0.5, &batches).unwrap();
        assert_eq!(m, v1(0.0));
        assert!(neumann_vector(&p, &v1(0.0), &v1(0.0), &v1(1.0), 0.0, &[]).is_err());
        assert!(neumann_vector(&p, &v1(0.0), &v1(0.0), &Vector::zeros(2), 0.5, &[]).is_err());
    }

    #[test]
    fn neumann_consumes_batches_last_first() {
        // A recording oracle shows step j reads batch Q-1-j.
        use crate::problems::Split;
        use std::sync::Mutex;
        struct Rec(QuadraticProblem, Mutex<Vec<usize>>);
        impl BilevelOracle for Rec {
            fn outer_dim(&self) -> usize { 1 }
            fn inner_dim(&self) -> usize { 1 }
            fn n_outer(&self) -> usize { 4 }
            fn n_inner(&self) -> usize { 4 }
            fn inner_grad_y(&self, x: &Vector, y: &Vector, b: &BatchIndices) -> Result<Vector> { self.0.inner_grad_y(x, y, b) }
            fn inner_hvp_yy(&self, x: &Vector, y: &Vector, v: &Vector, b: &BatchIndices) -> Result<Vector> {
                self.1.lock().unwrap().push(b.indices()[0]);
                self.0.inner_hvp_yy(x, y, v, b)
            }
            fn inner_jvp_xy(&self, x: &Vector, y: &Vector, v: &Vector, b: &BatchIndices) -> Result<Vector> { self.0.inner_jvp_xy(x, y, v, b) }
            fn outer_grads(&self, x: &Vector, y: &Vector, b: &BatchIndices) -> Result<(Vector, Vector)> { self.0.outer_grads(x, y, b) }
            fn loss(&self, x: &Vector, y: &Vector, s: Split) -> Result<f64> { self.0.loss(x, y, s) }
        }
        let rec = Rec(scalar_instance(), Mutex::new(vec![]));
        let batches: Vec<_> = (0..3).map(|i| BatchIndices::single(i, 4)).collect();
        neumann_vector(&rec, &v1(0.0), &v1(0.0), &v1(1.0), 0.5, &batches).unwrap();
        assert_eq!(*rec.1.lock().unwrap(), vec![2, 1, 0]);
    }

    #[test]
    fn shared_estimator_on_scalar_instance() {
        let p = scalar_instance();
        let x = v1(2.0);
        let cfg = HypergradConfig::new(0.5, 2, SamplingMode::SharedBatch, 4);
        let s = HypergradSamples::draw(&p, &cfg, &RngStream::new(0, "t")).unwrap();
        assert_eq!(s.batch_count(), 4);
        let g = estimate_hypergrad_shared(&p, &x, &x, &cfg, &s).unwrap();
        assert_eq!(g, v1(1.75));
        let exact = p.hypergrad_at(&x, &x);
        assert_eq!(exact, v1(2.0));
        assert!(((exact[0] - g[0]) - 0.5f64.powi(3) * 2.0).abs() < 1e-12);

        let cfg10 = HypergradConfig::new(0.5, 10, SamplingMode::SharedBatch, 4);
        let s10 = HypergradSamples::draw(&p, &cfg10, &RngStream::new(0, "t")).unwrap();
        let g10 = estimate_hypergrad_shared(&p, &x, &x, &cfg10, &s10).unwrap();
        assert!((g10[0] - 2.0 * (1.0 - 0.5f64.powi(11))).abs() < 1e-12);
    }

    #[test]
    fn zero_outer_gradient_leaves_direct_term() {
        // y = y_t = 0 makes ∇_y F vanish.
        let p = scalar_instance();
        for q in [0, 3, 7] {
            for eta in [0.1, 0.5, 0.9] {
                let cfg = HypergradConfig::new(eta, q, SamplingMode::SharedBatch, 2);
                let s = HypergradSamples::draw(&p, &cfg, &RngStream::new(1, "z")).unwrap();
                let g = estimate_hypergrad_shared(&p, &v1(2.0), &v1(0.0), &cfg, &s).unwrap();
                assert_eq!(g, v1(0.0));
            }
        }
    }

    #[test]
    fn wrong_mode_rejected() {
        let p = scalar_instance();
        let cfg = HypergradConfig::new(0.5, 2, SamplingMode::PerSample, 2);
        let s = HypergradSamples::draw(&p, &cfg, &RngStream::new(0, "m")).unwrap();
        assert!(matches!(
            estimate_hypergrad_shared(&p, &v1(1.0), &v1(1.0), &cfg, &s),
            Err(BilevelError::InvalidArgument(_))
        ));
        let shared = cfg.clone().with_mode(SamplingMode::SharedBatch);
        assert!(estimate_hypergrad_per_sample(&p, &v1(1.0), &v1(1.0), &shared, &s).is_err());
    }

    #[test]
    fn modes_agree_bitwise_on_deterministic_oracle() {
        let p = scalar_instance();
        for s1 in [1usize, 4] {
            let shared = HypergradConfig::new(0.5, 3, SamplingMode::SharedBatch, s1);
            let per = shared.clone().with_mode(SamplingMode::PerSample);
            let root = RngStream::new(3, "eq");
            let a = HypergradSamples::draw(&p, &shared, &root).unwrap();
            let b = HypergradSamples::draw(&p, &per, &root).unwrap();
            let ga = estimate_hypergrad_shared(&p, &v1(1.3), &v1(-0.7), &shared, &a).unwrap();
            let gb = estimate_hypergrad_per_sample(&p, &v1(1.3), &v1(-0.7), &per, &b).unwrap();
            assert_eq!(ga.as_slice()[0].to_bits(), gb.as_slice()[0].to_bits());
        }
    }

    #[test]
    fn cq_formula() {
        assert!((bias_bound_cq(1.0, 1.0, 1.0, 0.5, 2).unwrap() - 0.125).abs() < 1e-15);
        let a = bias_bound_cq(0.3, 2.0, 1.5, 0.4, 5).unwrap();
        let b = bias_bound_cq(0.3, 2.0, 1.5, 0.4, 6).unwrap();
        assert!((b / a - (1.0 - 0.12)).abs() < 1e-14);
        let tiny = bias_bound_cq(2.0, 3.0, 5.0, 1e-12, 4).unwrap();
        assert!((tiny - 7.5).abs() < 1e-9);
        assert!(bias_bound_cq(1.0, 1.0, 1.0, 1.0, 2).is_err());
    }
}
