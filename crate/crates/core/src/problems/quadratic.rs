use nalgebra::{Cholesky, DMatrix, Dyn};

use super::{check_inner_batch, check_outer_batch, check_point, finite, BilevelOracle, Split};
use crate::error::{BilevelError, Result};
use crate::numerics::linalg::{extreme_eigenvalues, from_dvector, mat_t_vec, mat_vec, to_dvector};
use crate::numerics::{BatchIndices, RngStream, Vector};
use crate::theory::SmoothnessConstants;

const EIGEN_CHECK_TOL: f64 = 1e-6;
const POWER_ITERS: usize = 2000;

/// Parameters of a random strongly-convex quadratic instance.
///
/// Inner: `G(x, y; ζ) = ½ yᵀAy + yᵀ(Bx + c) + σ_n ε_ζᵀ y`.
/// Outer: `F(x, y; ξ) = ½‖y − y_t‖² + ½ c_x‖x‖² + σ_n ε'_ξᵀ y`.
#[derive(Clone, Debug)]
pub struct QuadraticSpec {
    pub p: usize,
    pub q: usize,
    pub mu: f64,
    pub l_inner: f64,
    pub noise_scale: f64,
    pub n_samples: usize,
    /// Outer target `y_t`; drawn from the seed when `None`.
    pub target: Option<Vector>,
    pub c_x: f64,
    /// Spectral norm of the coupling matrix `B`.
    pub coupling_norm: f64,
    pub seed: u64,
}

impl Default for QuadraticSpec {
    fn default() -> Self {
        QuadraticSpec {
            p: 10,
            q: 10,
            mu: 0.5,
            l_inner: 1.0,
            noise_scale: 0.0,
            n_samples: 1000,
            target: None,
            c_x: 0.0,
            coupling_norm: 1.0,
            seed: 0,
        }
    }
}

/// Explicit matrices for hand-built instances such as the scalar one.
#[derive(Clone, Debug)]
pub struct QuadraticParts {
    /// Symmetric positive definite inner Hessian, `q × q`.
    pub a: DMatrix<f64>,
    /// Coupling, `q × p`; the inner gradient is `Ay + Bx + c`.
    pub b: DMatrix<f64>,
    pub c: Vector,
    pub target: Vector,
    pub c_x: f64,
    pub noise_scale: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// Quadratic bilevel instance with closed-form `y*(x)` and `∇Φ(x)`.
#[derive(Clone, Debug)]
pub struct QuadraticProblem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: Vector,
    target: Vector,
    c_x: f64,
    noise_scale: f64,
    inner_noise: Vec<Vector>,
    outer_noise: Vec<Vector>,
    mu: f64,
    l_inner: f64,
    a_chol: Cholesky<f64, Dyn>,
}

/// Builds a random instance with `A = R diag(μ..L) Rᵀ`.
pub fn make_quadratic_problem(spec: &QuadraticSpec) -> Result<QuadraticProblem> {
    if !(spec.mu > 0.0 && spec.mu <= spec.l_inner && spec.l_inner.is_finite()) {
        return Err(BilevelError::invalid(format!(
            "inner spectrum needs 0 < mu <= L_inner (got mu={}, L_inner={})",
            spec.mu, spec.l_inner
        )));
    }
    if spec.p == 0 || spec.q == 0 || spec.n_samples == 0 {
        return Err(BilevelError::invalid("dimensions and n_samples must be >= 1"));
    }
    if spec.noise_scale < 0.0 || spec.c_x < 0.0 || spec.coupling_norm < 0.0 {
        return Err(BilevelError::invalid("noise_scale, c_x and coupling_norm must be >= 0"));
    }
    let root = RngStream::new(spec.seed, "quadratic");
    let (p, q) = (spec.p, spec.q);

    let mut s = root.child("rotation");
    let g = DMatrix::from_fn(q, q, |_, _| s.normal());
    let rot = g.qr().q();
    let eigs: Vec<f64> = (0..q)
        .map(|i| {
            if q == 1 {
                spec.mu
            } else {
                spec.mu + (spec.l_inner - spec.mu) * i as f64 / (q - 1) as f64
            }
        })
        .collect();
    let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eigs));
    let mut a = &rot * diag * rot.transpose();
    a = (&a + a.transpose()) * 0.5;

    let mut s = root.child("coupling");
    let raw = DMatrix::from_fn(q, p, |_, _| s.normal());
    let norm = raw.clone().svd(false, false).singular_values.max();
    let b = raw * (spec.coupling_norm / norm);

    let mut s = root.child("offset");
    let c = Vector::from((0..q).map(|_| s.normal()).collect::<Vec<_>>());
    let target = match &spec.target {
        Some(t) => {
            t.ensure_dim(q, "quadratic target")?;
            t.clone()
        }
        None => {
            let mut s = root.child("target");
            Vector::from((0..q).map(|_| s.normal()).collect::<Vec<_>>())
        }
    };
    QuadraticProblem::from_parts(QuadraticParts {
        a,
        b,
        c,
        target,
        c_x: spec.c_x,
        noise_scale: spec.noise_scale,
        n_samples: spec.n_samples,
        seed: spec.seed,
    })
}

fn centered_noise(stream: &mut RngStream, n: usize, dim: usize) -> Vec<Vector> {
    let raw: Vec<Vector> = (0..n)
        .map(|_| Vector::from((0..dim).map(|_| stream.normal()).collect::<Vec<_>>()))
        .collect();
    let mut mean = Vector::zeros(dim);
    for v in &raw {
        mean.add_assign(v);
    }
    let mean = mean.div_scalar(n as f64);
    raw.iter().map(|v| v - &mean).collect()
}

impl QuadraticProblem {
    pub fn from_parts(parts: QuadraticParts) -> Result<Self> {
        let q = parts.a.nrows();
        if parts.a.ncols() != q || parts.b.nrows() != q || parts.b.ncols() == 0 || q == 0 {
            return Err(BilevelError::invalid("quadratic: A must be q×q and B q×p"));
        }
        parts.c.ensure_dim(q, "quadratic offset c")?;
        parts.target.ensure_dim(q, "quadratic target")?;
        if (&parts.a - parts.a.transpose()).amax() > 1e-12 {
            return Err(BilevelError::invalid("quadratic: A must be symmetric"));
        }
        if parts.n_samples == 0 {
            return Err(BilevelError::invalid("quadratic: n_samples must be >= 1"));
        }
        let a_chol = Cholesky::new(parts.a.clone())
            .ok_or_else(|| BilevelError::invalid("quadratic: A is not positive definite"))?;

        let root = RngStream::new(parts.seed, "quadratic");
        let mut check = root.child("eigencheck");
        let (lo, hi) = extreme_eigenvalues(|v| mat_vec(&parts.a, v), q, POWER_ITERS, &mut check);
        let sym = parts.a.clone().symmetric_eigen();
        let (mu, l_inner) = (sym.eigenvalues.min(), sym.eigenvalues.max());
        if lo < mu - EIGEN_CHECK_TOL || hi > l_inner + EIGEN_CHECK_TOL {
            return Err(BilevelError::domain(format!(
                "quadratic: power iteration extremes [{lo}, {hi}] outside spectrum [{mu}, {l_inner}]"
            )));
        }

        let (inner_noise, outer_noise) = if parts.noise_scale > 0.0 {
            let mut s = root.child("inner-noise");
            let inner = centered_noise(&mut s, parts.n_samples, q);
            let mut s = root.child("outer-noise");
            (inner, centered_noise(&mut s, parts.n_samples, q))
        } else {
            (
                vec![Vector::zeros(q); parts.n_samples],
                vec![Vector::zeros(q); parts.n_samples],
            )
        };
        Ok(QuadraticProblem {
            a: parts.a,
            b: parts.b,
            c: parts.c,
            target: parts.target,
            c_x: parts.c_x,
            noise_scale: parts.noise_scale,
            inner_noise,
            outer_noise,
            mu,
            l_inner,
            a_chol,
        })
    }

    /// The scalar instance: `A = 1`, `B = −1`, `c = 0`, `y_t = 0`,
    /// `c_x = 0`, so `y*(x) = x` and `Φ(x) = ½x²`.
    pub fn scalar_instance(noise_scale: f64, n_samples: usize, seed: u64) -> Result<Self> {
        Self::from_parts(QuadraticParts {
            a: DMatrix::from_element(1, 1, 1.0),
            b: DMatrix::from_element(1, 1, -1.0),
            c: Vector::zeros(1),
            target: Vector::zeros(1),
            c_x: 0.0,
            noise_scale,
            n_samples,
            seed,
        })
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn target(&self) -> &Vector {
        &self.target
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn inner_noise(&self) -> &[Vector] {
        &self.inner_noise
    }

    pub fn outer_noise(&self) -> &[Vector] {
        &self.outer_noise
    }

    fn solve_a(&self, rhs: &Vector) -> Vector {
        from_dvector(&self.a_chol.solve(&to_dvector(rhs)))
    }

    fn noise_mean(noise: &[Vector], batch: &BatchIndices, dim: usize) -> Vector {
        let mut acc = Vector::zeros(dim);
        for i in batch.iter() {
            acc.add_assign(&noise[i]);
        }
        acc.div_scalar(batch.len() as f64)
    }

    /// Noiseless `∇_y g(x, y) = Ay + Bx + c`.
    pub fn inner_grad_exact(&self, x: &Vector, y: &Vector) -> Vector {
        let mut g = mat_vec(&self.a, y);
        g.add_assign(&mat_vec(&self.b, x));
        g.add_assign(&self.c);
        g
    }

    /// `∇̃Φ(x, y) = ∇_x f − ∇_x∇_y g [∇²_y g]⁻¹ ∇_y f` at an arbitrary `y`.
    pub fn hypergrad_at(&self, x: &Vector, y: &Vector) -> Vector {
        let fy = y - &self.target;
        let mut out = x.scale(self.c_x);
        out.axpy(-1.0, &mat_t_vec(&self.b, &self.solve_a(&fy)));
        out
    }

    /// `Φ(x) = f(x, y*(x))`.
    pub fn phi(&self, x: &Vector) -> Result<f64> {
        let y = self.solve_inner_exact(x)?;
        self.loss(x, &y, Split::Validation)
    }

    /// Minimizer of `Φ`, when the normal equations are non-singular.
    pub fn minimizer(&self) -> Option<Vector> {
        let p = self.b.ncols();
        let ainv_b = self.a_chol.solve(&self.b);
        let h = DMatrix::identity(p, p) * self.c_x + ainv_b.transpose() * &ainv_b;
        let ainv_c = self.solve_a(&self.c);
        let rhs = mat_t_vec(&self.b, &self.solve_a(&(&ainv_c + &self.target)));
        let sol = h.lu().solve(&to_dvector(&rhs))?;
        Some(from_dvector(&sol).scale(-1.0))
    }

    /// Smoothness and variance constants valid on the ball of `radius`
    /// around `(x_c, y_c)` in the joint space.
    ///
    /// `L` is the largest joint-Hessian spectral norm of `F` and `G`; the
    /// Hessians are constant so `τ = ρ = 0`. `M` bounds `‖∇F(z; ξ)‖` on the
    /// ball, and `σ² = σ_n² · mean‖ε_ζ‖²`.
    pub fn smoothness_constants(&self, x_c: &Vector, y_c: &Vector, radius: f64) -> SmoothnessConstants {
        let (p, q) = (self.b.ncols(), self.b.nrows());
        let mut joint = DMatrix::zeros(p + q, p + q);
        joint.view_mut((p, p), (q, q)).copy_from(&self.a);
        joint.view_mut((p, 0), (q, p)).copy_from(&self.b);
        joint.view_mut((0, p), (p, q)).copy_from(&self.b.transpose());
        let g_norm = joint
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        let f_norm = self.c_x.max(1.0);
        let l = g_norm.max(f_norm);

        let centre_grad = (self.c_x * self.c_x * x_c.norm_sq() + y_c.dist_sq(&self.target)).sqrt();
        let max_outer_noise = self.outer_noise.iter().map(|e| e.norm()).fold(0.0, f64::max);
        let m = centre_grad + f_norm * radius + self.noise_scale * max_outer_noise;

        let mean_sq = self.inner_noise.iter().map(|e| e.norm_sq()).sum::<f64>() / self.inner_noise.len() as f64;
        SmoothnessConstants {
            mu: self.mu,
            l,
            m,
            tau: 0.0,
            rho: 0.0,
            sigma: self.noise_scale * mean_sq.sqrt(),
        }
    }
}

impl BilevelOracle for QuadraticProblem {
    fn outer_dim(&self) -> usize {
        self.b.ncols()
    }

    fn inner_dim(&self) -> usize {
        self.a.nrows()
    }

    fn n_outer(&self) -> usize {
        self.outer_noise.len()
    }

    fn n_inner(&self) -> usize {
        self.inner_noise.len()
    }

    fn has_exact_inner_solution(&self) -> bool {
        true
    }

    fn has_analytic_hypergradient(&self) -> bool {
        true
    }

    fn strong_convexity(&self) -> Option<f64> {
        Some(self.mu)
    }

    fn inner_smoothness(&self) -> Option<f64> {
        Some(self.l_inner)
    }

    fn inner_grad_y(&self, x: &Vector, y: &Vector, batch: &BatchIndices) -> Result<Vector> {
        check_point(self, x, y)?;
        check_inner_batch(self, batch)?;
        let mut g = self.inner_grad_exact(x, y);
        if self.noise_scale > 0.0 {
            let n = Self::noise_mean(&self.inner_noise, batch, self.inner_dim());
            g.axpy(self.noise_scale, &n);
        }
        finite(g, "quadratic inner gradient")
    }

    fn inner_hvp_yy(&self, x: &Vector, y: &Vector, v: &Vector, batch: &BatchIndices) -> Result<Vector> {
        check_point(self, x, y)?;
        check_inner_batch(self, batch)?;
        v.ensure_dim(self.inner_dim(), "hvp direction")?;
        finite(mat_vec(&self.a, v), "quadratic hvp")
    }

    fn inner_jvp_xy(&self, x: &Vector, y: &Vector, v: &Vector, batch: &BatchIndices) -> Result<Vector> {
        check_point(self, x, y)?;
        check_inner_batch(self, batch)?;
        v.ensure_dim(self.inner_dim(), "jvp direction")?;
        finite(mat_t_vec(&self.b, v), "quadratic jvp")
    }

    fn outer_grads(&self, x: &Vector, y: &Vector, batch: &BatchIndices) -> Result<(Vector, Vector)> {
        check_point(self, x, y)?;
        check_outer_batch(self, batch)?;
        let gx = x.scale(self.c_x);
        let mut gy = y - &self.target;
        if self.noise_scale > 0.0 {
            let n = Self::noise_mean(&self.outer_noise, batch, self.inner_dim());
            gy.axpy(self.noise_scale, &n);
        }
        Ok((finite(gx, "quadratic outer grad x")?, finite(gy, "quadratic outer grad y")?))
    }

    fn loss(&self, x: &Vector, y: &Vector, split: Split) -> Result<f64> {
        check_point(self, x, y)?;
        let value = match split {
            Split::Train => {
                let ay = mat_vec(&self.a, y);
                let mut lin = mat_vec(&self.b, x);
                lin.add_assign(&self.c);
                0.5 * y.dot(&ay) + y.dot(&lin)
            }
            Split::Validation | Split::Test => {
                0.5 * y.dist_sq(&self.target) + 0.5 * self.c_x * x.norm_sq()
            }
        };
        if !value.is_finite() {
            return Err(BilevelError::domain("quadratic loss is not finite"));
        }
        Ok(value)
    }

    fn solve_inner_exact(&self, x: &Vector) -> Result<Vector> {
        x.ensure_dim(self.outer_dim(), "outer variable x")?;
        let mut rhs = mat_vec(&self.b, x);
        rhs.add_assign(&self.c);
        finite(self.solve_a(&rhs).scale(-1.0), "quadratic inner solution")
    }

    fn analytic_hypergrad(&self, x: &Vector) -> Result<Vector> {
        let y = self.solve_inner_exact(x)?;
        finite(self.hypergrad_at(x, &y), "quadratic hypergradient")
    }
}
