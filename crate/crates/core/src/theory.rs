//! Smoothness/variance constants, theorem-prescribed hyperparameters and
//! the diagnostics the convergence analysis is stated in.

use crate::error::{BilevelError, Result};
use crate::hypergrad::{expected_hypergrad, HypergradConfig, SamplingMode};
use crate::numerics::{finite_difference_grad, BatchIndices, RngStream, Vector, DEFAULT_FD_STEP};
use crate::optimizers::MrboHyperparams;
use crate::problems::{BilevelOracle, Split};

/// Problem constants: strong convexity `μ`, gradient Lipschitz `L`,
/// function Lipschitz `M`, mixed-partial Lipschitz `τ`, Hessian Lipschitz
/// `ρ` and inner-gradient noise level `σ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothnessConstants {
    pub mu: f64,
    pub l: f64,
    pub m: f64,
    pub tau: f64,
    pub rho: f64,
    pub sigma: f64,
}

impl SmoothnessConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [self.mu, self.l, self.m, self.tau, self.rho, self.sigma];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(BilevelError::invalid(format!("constants must be finite and non-negative: {self:?}")));
        }
        if !(self.mu > 0.0 && self.mu <= self.l) {
            return Err(BilevelError::invalid(format!("constants need 0 < mu <= L (mu={}, L={})", self.mu, self.l)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivedConstants {
    /// Smoothness of `Φ`.
    pub l_phi: f64,
    /// Lipschitz constant of the minibatch hypergradient estimator in `z`.
    pub l_q: f64,
    /// `L′ = max{L + L²/μ + Mτ/μ + LMρ/μ², L_Q}`.
    pub l_prime: f64,
    /// Truncation bias bound.
    pub c_q: f64,
    /// Variance bound of the shared-batch estimator.
    pub g_sq: f64,
    /// Per-sample variance constant (divide by `S₁`).
    pub sigma_prime_sq: f64,
}

impl DerivedConstants {
    pub fn l_q_sq(&self) -> f64 {
        self.l_q * self.l_q
    }

    pub fn l_prime_sq(&self) -> f64 {
        self.l_prime * self.l_prime
    }
}

fn check_eta(c: &SmoothnessConstants, eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta * c.mu < 1.0) {
        return Err(BilevelError::invalid(format!("need 0 < eta*mu < 1 (eta={eta}, mu={})", c.mu)));
    }
    Ok(())
}

/// `L + L²/μ + Mτ/μ + LMρ/μ²`, the first branch of `L′`.
pub fn l_prime_base(c: &SmoothnessConstants) -> f64 {
    let (mu, l, m) = (c.mu, c.l, c.m);
    l + l * l / mu + m * c.tau / mu + l * m * c.rho / (mu * mu)
}

pub fn derive_constants(c: &SmoothnessConstants, eta: f64, q: usize, s: usize) -> Result<DerivedConstants> {
    c.validate()?;
    check_eta(c, eta)?;
    if s == 0 {
        return Err(BilevelError::invalid("batch size S must be >= 1"));
    }
    let (mu, l, m, tau, rho, sigma) = (c.mu, c.l, c.m, c.tau, c.rho, c.sigma);
    let qf = q as f64;
    let q1 = qf + 1.0;
    let sf = s as f64;

    let l_phi = l
        + (2.0 * l * l + tau * m * m) / mu
        + (rho * l * m + l.powi(3) + tau * m * l) / (mu * mu)
        + rho * l * l * m / mu.powi(3);
    let l_q_sq = 2.0 * l * l
        + 4.0 * tau * tau * eta * eta * m * m * q1 * q1
        + 8.0 * l.powi(4) * eta * eta * q1 * q1
        + 2.0 * l * l * eta.powi(4) * m * m * rho * rho * qf * qf * q1 * q1;
    let l_prime_sq = l_prime_base(c).powi(2).max(l_q_sq);
    let c_q = (1.0 - eta * mu).powi(q as i32 + 1) * m * l / mu;
    let g_sq = 2.0 * m * m / sf
        + 12.0 * m * m * l * l * eta * eta * q1 * q1 / sf
        + 4.0 * m * m * l * l * (qf + 2.0) * q1 * q1 * eta.powi(4) * sigma * sigma / sf;
    let sigma_prime_sq = 2.0 * m * m + 28.0 * l * l * m * m * eta * eta * q1 * q1;

    Ok(DerivedConstants {
        l_phi,
        l_q: l_q_sq.sqrt(),
        l_prime: l_prime_sq.sqrt(),
        c_q,
        g_sq,
        sigma_prime_sq,
    })
}

/// MRBO hyperparameters with every MRBO convergence condition taken at
/// equality: `c₁`, `c₂` at their lower bounds, `m` at its lower bound and
/// `γ` at the smallest of its caps.
#[allow(clippy::too_many_arguments)]
pub fn derive_mrbo_hyperparams(
    c: &SmoothnessConstants,
    d: f64,
    lambda: f64,
    gamma_hint: f64,
    eta: f64,
    q: usize,
    s: usize,
    k: usize,
) -> Result<MrboHyperparams> {
    c.validate()?;
    if !(d > 0.0) {
        return Err(BilevelError::invalid("theorem condition violated: d > 0"));
    }
    if !(lambda > 0.0 && lambda <= 1.0 / (6.0 * c.l)) {
        return Err(BilevelError::invalid(format!(
            "theorem condition violated: 0 < lambda <= 1/(6L) = {} (lambda = {lambda})",
            1.0 / (6.0 * c.l)
        )));
    }
    if !(eta > 0.0 && eta < 1.0 / c.l) {
        return Err(BilevelError::invalid(format!(
            "theorem condition violated: eta < 1/L = {} (eta = {eta})",
            1.0 / c.l
        )));
    }
    if !(gamma_hint > 0.0) {
        return Err(BilevelError::invalid("gamma_hint must be positive"));
    }
    if k == 0 {
        return Err(BilevelError::invalid("K must be >= 1"));
    }
    let dc = derive_constants(c, eta, q, s)?;
    let (mu, l) = (c.mu, c.l);
    let d3 = d.powi(3);
    let c1 = 2.0 / (3.0 * d3) + 9.0 * lambda * mu / 4.0;
    let c2 = 2.0 / (3.0 * d3) + 75.0 * dc.l_prime_sq() * lambda / (2.0 * mu);
    let m = 2.0f64.max(d3).max((c1 * d).powi(3)).max((c2 * d).powi(3));
    let eta_last = eta_schedule(d, m, k);
    let gamma_cap_smooth = 1.0 / (4.0 * dc.l_phi * eta_last);
    let gamma_cap_track = lambda * mu
        / (150.0 * dc.l_prime_sq() * l * l / (mu * mu) + 8.0 * lambda * mu * (dc.l_q_sq() + l * l)).sqrt();
    let gamma = gamma_hint.min(gamma_cap_smooth).min(gamma_cap_track);
    Ok(MrboHyperparams {
        gamma,
        lambda,
        c1,
        c2,
        m,
        d,
        k,
        hypergrad: HypergradConfig::new(eta, q, SamplingMode::SharedBatch, s),
    })
}

/// `η_k = d / (m + k)^{1/3}`.
pub fn eta_schedule(d: f64, m: f64, k: usize) -> f64 {
    d / (m + k as f64).cbrt()
}

/// Step sizes and loop lengths the VRBO convergence theorem prescribes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VrboTheoremParams {
    pub alpha: f64,
    pub beta: f64,
    pub m_inner: usize,
    pub period: usize,
    /// `L_m = max{L_Q, L_Φ}`.
    pub l_m: f64,
}

pub fn derive_vrbo_hyperparams(c: &SmoothnessConstants, eta: f64, q: usize, s2: usize) -> Result<VrboTheoremParams> {
    c.validate()?;
    if !(eta > 0.0 && eta < 1.0 / c.l) {
        return Err(BilevelError::invalid(format!(
            "theorem condition violated: eta < 1/L = {} (eta = {eta})",
            1.0 / c.l
        )));
    }
    let dc = derive_constants(c, eta, q, s2)?;
    let (mu, l) = (c.mu, c.l);
    let l_m = dc.l_q.max(dc.l_phi);
    let alpha = 1.0 / (20.0 * l_m.powi(3));
    let beta = 2.0 / (13.0 * dc.l_q);
    let s2_min = 2.0 * (l / mu + 1.0) * l * beta;
    if (s2 as f64) < s2_min {
        return Err(BilevelError::invalid(format!(
            "theorem condition violated: S2 >= 2(L/mu + 1) L beta = {s2_min} (S2 = {s2})"
        )));
    }
    let m_inner = ((16.0 / (mu * beta)).ceil() - 1.0).max(0.0) as usize;
    let period = ((mu * l * beta * s2 as f64 / (mu + l)).ceil() as usize).max(1);
    Ok(VrboTheoremParams {
        alpha,
        beta,
        m_inner,
        period,
        l_m,
    })
}

/// Informational constant `M′` of the MRBO rate bound, given the initial
/// optimality gap `Φ(x₁) − Φ*`.
pub fn mrbo_rate_constant(c: &SmoothnessConstants, hp: &MrboHyperparams, phi_gap: f64) -> Result<f64> {
    let dc = derive_constants(c, hp.hypergrad.eta, hp.hypergrad.q, hp.hypergrad.batch_size)?;
    let (d, lam, mu) = (hp.d, hp.lambda, c.mu);
    let eta0 = eta_schedule(d, hp.m, 0);
    let eta_k = eta_schedule(d, hp.m, hp.k);
    let log_term = (hp.m + hp.k as f64).ln();
    Ok(phi_gap / (hp.gamma * d)
        + (2.0 * dc.g_sq * (hp.c1 * hp.c1 + hp.c2 * hp.c2) * d * d / (lam * mu) + 2.0 * dc.c_q * dc.c_q * d * d / (eta_k * eta_k))
            * log_term
        + 2.0 * dc.g_sq / (hp.hypergrad.batch_size as f64 * lam * mu * d * eta0))
}

/// Informational `L″` of the VRBO analysis; `None` when `1/L″ ≤ 0`.
pub fn vrbo_l_double_prime(c: &SmoothnessConstants, eta: f64, q: usize, alpha: f64) -> Result<Option<f64>> {
    let dc = derive_constants(c, eta, q, 1)?;
    let lp2 = l_prime_base(c).powi(2);
    let inv = alpha / 2.0 - dc.l_phi * alpha * alpha / 2.0 - 62.0 * alpha.powi(3) * lp2 * dc.l_q_sq() / (c.mu * c.mu)
        - 44.0 * alpha.powi(3) * dc.l_q_sq();
    Ok((inv > 0.0).then(|| 1.0 / inv))
}

/// Full-batch gradient descent on the inner problem with step
/// `1 / L_inner`, stopping once `‖∇_y g‖ ≤ tol`.
pub fn solve_inner_descent(oracle: &dyn BilevelOracle, x: &Vector, y0: &Vector, tol: f64, max_iter: usize) -> Result<Vector> {
    let l = oracle
        .inner_smoothness()
        .ok_or_else(|| BilevelError::unsupported("inner descent needs a known inner smoothness bound"))?;
    let full = BatchIndices::full(oracle.n_inner());
    let mut y = y0.clone();
    for _ in 0..max_iter {
        let g = oracle.inner_grad_y(x, &y, &full)?;
        if g.norm() <= tol {
            return Ok(y);
        }
        y.axpy(-1.0 / l, &g);
    }
    Err(BilevelError::domain(format!("inner descent did not reach tolerance {tol} in {max_iter} steps")))
}

/// Tolerance of the inner solve behind the finite-difference fallback.
const FD_INNER_TOL: f64 = 1e-12;

/// `‖∇Φ(x)‖²`, from the analytic hypergradient when available and
/// otherwise (if allowed) from central differences of `x ↦ f(x, y(x))`
/// with the inner problem solved by full-batch descent.
pub fn stationarity_measure(oracle: &dyn BilevelOracle, x: &Vector, fd_fallback: bool) -> Result<f64> {
    if oracle.has_analytic_hypergradient() {
        return Ok(oracle.analytic_hypergrad(x)?.norm_sq());
    }
    if !fd_fallback {
        return Err(BilevelError::unsupported("no analytic hypergradient and finite-difference fallback disabled"));
    }
    Ok(fd_hypergrad(oracle, x)?.norm_sq())
}

/// Finite-difference hypergradient used as an independent oracle.
pub fn fd_hypergrad(oracle: &dyn BilevelOracle, x: &Vector) -> Result<Vector> {
    let y0 = Vector::zeros(oracle.inner_dim());
    let failed = std::cell::Cell::new(None);
    let g = finite_difference_grad(
        |xp| match solve_inner_descent(oracle, xp, &y0, FD_INNER_TOL, 10_000_000)
            .and_then(|y| oracle.loss(xp, &y, Split::Validation))
        {
            Ok(v) => v,
            Err(e) => {
                failed.set(Some(e.to_string()));
                f64::NAN
            }
        },
        x,
        DEFAULT_FD_STEP,
    );
    if let Some(msg) = failed.take() {
        return Err(BilevelError::domain(msg));
    }
    g
}

/// Estimator errors at one iterate; a field is `None` when the oracle
/// lacks what it needs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Diagnostics {
    /// `‖v_k − ∇̄Φ(x_k)‖²`
    pub eps_bar_sq: Option<f64>,
    /// `‖v_k − ∇̄Φ(x_k)‖² + ‖u_k − ∇_y g(x_k, y_k)‖²`
    pub delta_cap: Option<f64>,
    /// `‖∇_y g(x_k, y_k)‖²`
    pub delta_small: Option<f64>,
    /// `‖y_k − y*(x_k)‖²`
    pub tracking_sq: Option<f64>,
}

/// Evaluates [`Diagnostics`] with `∇̄Φ` computed on the full population
/// using the run's `(η, Q)`.
pub fn compute_diagnostics(
    oracle: &dyn BilevelOracle,
    x: &Vector,
    y: &Vector,
    v: Option<&Vector>,
    u: Option<&Vector>,
    estimator: &HypergradConfig,
) -> Diagnostics {
    let eps_bar_sq = v.and_then(|v| {
        expected_hypergrad(oracle, x, y, estimator.eta, estimator.q)
            .ok()
            .map(|g| v.dist_sq(&g))
    });
    let inner = oracle.inner_grad_y(x, y, &BatchIndices::full(oracle.n_inner())).ok();
    let delta_small = inner.as_ref().map(Vector::norm_sq);
    let delta_cap = match (eps_bar_sq, u, &inner) {
        (Some(e), Some(u), Some(g)) => Some(e + u.dist_sq(g)),
        _ => None,
    };
    let tracking_sq = if oracle.has_exact_inner_solution() {
        oracle.solve_inner_exact(x).ok().map(|ys| y.dist_sq(&ys))
    } else {
        None
    };
    Diagnostics {
        eps_bar_sq,
        delta_cap,
        delta_small,
        tracking_sq,
    }
}

/// Safety factor applied to empirically observed maxima.
pub const EMPIRICAL_SAFETY: f64 = 1.5;

/// Estimates constants on the ball of `radius` around `(x0, y0)` by
/// sampling `n_points` uniform directions and taking observed maxima
/// times [`EMPIRICAL_SAFETY`].
///
/// `M` from single-sample outer gradient norms, `L` from single-sample
/// Hessian-vector and Jacobian-vector norms along unit directions and from
/// outer-gradient differences, `τ`/`ρ` from central differences of those
/// products, and `σ²` from the spread of single-sample inner gradients.
pub fn estimate_constants_empirical(
    oracle: &dyn BilevelOracle,
    x0: &Vector,
    y0: &Vector,
    radius: f64,
    n_points: usize,
    stream: &RngStream,
) -> Result<SmoothnessConstants> {
    let mu = oracle
        .strong_convexity()
        .ok_or_else(|| BilevelError::unsupported("oracle does not report a strong convexity constant"))?;
    let (p, q) = (oracle.outer_dim(), oracle.inner_dim());
    let mut s = stream.child("empirical-constants");
    let unit = |dim: usize, s: &mut RngStream| {
        let v = Vector::from((0..dim).map(|_| s.normal()).collect::<Vec<_>>());
        let n = v.norm();
        v.div_scalar(n)
    };
    let full = BatchIndices::full(oracle.n_inner());
    let h = 1e-4;
    let (mut m, mut l, mut tau, mut rho, mut sig2) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..n_points {
        let r = radius * s.uniform().powf(1.0 / (p + q) as f64);
        let dir = unit(p + q, &mut s);
        let x = Vector::from((0..p).map(|i| x0[i] + r * dir[i]).collect::<Vec<_>>());
        let y = Vector::from((0..q).map(|i| y0[i] + r * dir[p + i]).collect::<Vec<_>>());

        let xi = BatchIndices::single(s.index(oracle.n_outer()), oracle.n_outer());
        let zeta = BatchIndices::single(s.index(oracle.n_inner()), oracle.n_inner());
        let (gx, gy) = oracle.outer_grads(&x, &y, &xi)?;
        m = m.max((gx.norm_sq() + gy.norm_sq()).sqrt());

        let vy = unit(q, &mut s);
        l = l.max(oracle.inner_hvp_yy(&x, &y, &vy, &zeta)?.norm());
        l = l.max(oracle.inner_jvp_xy(&x, &y, &vy, &zeta)?.norm());

        let dz = unit(p + q, &mut s);
        let dx = Vector::from(dz.as_slice()[..p].to_vec());
        let dy = Vector::from(dz.as_slice()[p..].to_vec());
        let (xp, yp) = (&x + &dx.scale(h), &y + &dy.scale(h));
        let (xm, ym) = (&x - &dx.scale(h), &y - &dy.scale(h));
        let (gxp, gyp) = oracle.outer_grads(&xp, &yp, &xi)?;
        let (gxm, gym) = oracle.outer_grads(&xm, &ym, &xi)?;
        l = l.max(((gxp.dist_sq(&gxm) + gyp.dist_sq(&gym)).sqrt()) / (2.0 * h));
        let hv = oracle.inner_hvp_yy(&xp, &yp, &vy, &zeta)?.dist(&oracle.inner_hvp_yy(&xm, &ym, &vy, &zeta)?);
        rho = rho.max(hv / (2.0 * h));
        let jv = oracle.inner_jvp_xy(&xp, &yp, &vy, &zeta)?.dist(&oracle.inner_jvp_xy(&xm, &ym, &vy, &zeta)?);
        tau = tau.max(jv / (2.0 * h));

        let mean = oracle.inner_grad_y(&x, &y, &full)?;
        let mut spread = 0.0;
        const SPREAD_SAMPLES: usize = 16;
        for _ in 0..SPREAD_SAMPLES {
            let b = BatchIndices::single(s.index(oracle.n_inner()), oracle.n_inner());
            spread += oracle.inner_grad_y(&x, &y, &b)?.dist_sq(&mean);
        }
        sig2 = sig2.max(spread / SPREAD_SAMPLES as f64);
    }
    let k = EMPIRICAL_SAFETY;
    Ok(SmoothnessConstants {
        mu,
        l: (k * l).max(mu),
        m: k * m,
        tau: k * tau,
        rho: k * rho,
        sigma: k * sig2.sqrt(),
    })
}
