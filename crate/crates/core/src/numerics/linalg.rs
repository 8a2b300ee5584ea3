use nalgebra::DMatrix;

use super::{RngStream, Vector};

/// `m · v` with a fixed row-major summation order.
pub fn mat_vec(m: &DMatrix<f64>, v: &Vector) -> Vector {
    assert_eq!(m.ncols(), v.dim(), "mat_vec: dimension mismatch");
    let mut out = Vector::zeros(m.nrows());
    for i in 0..m.nrows() {
        let mut acc = 0.0;
        for j in 0..m.ncols() {
            acc += m[(i, j)] * v[j];
        }
        out[i] = acc;
    }
    out
}

/// `mᵀ · v` with a fixed summation order.
pub fn mat_t_vec(m: &DMatrix<f64>, v: &Vector) -> Vector {
    assert_eq!(m.nrows(), v.dim(), "mat_t_vec: dimension mismatch");
    let mut out = Vector::zeros(m.ncols());
    for j in 0..m.ncols() {
        let mut acc = 0.0;
        for i in 0..m.nrows() {
            acc += m[(i, j)] * v[i];
        }
        out[j] = acc;
    }
    out
}

pub fn to_dvector(v: &Vector) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_column_slice(v.as_slice())
}

pub fn from_dvector(v: &nalgebra::DVector<f64>) -> Vector {
    Vector::from(v.as_slice().to_vec())
}

/// Largest eigenvalue of a symmetric positive semi-definite operator by
/// power iteration, reported as the final Rayleigh quotient.
pub fn power_iteration<F>(apply: F, dim: usize, iters: usize, stream: &mut RngStream) -> f64
where
    F: Fn(&Vector) -> Vector,
{
    let mut v = Vector::from((0..dim).map(|_| stream.normal()).collect::<Vec<_>>());
    let n = v.norm();
    v = v.div_scalar(n);
    let mut rq = 0.0;
    for _ in 0..iters {
        let w = apply(&v);
        rq = v.dot(&w);
        let n = w.norm();
        if n == 0.0 {
            return 0.0;
        }
        v = w.div_scalar(n);
    }
    rq
}

/// `(λ_min, λ_max)` of a symmetric positive semi-definite operator, using a
/// shifted second power iteration for the smallest eigenvalue.
pub fn extreme_eigenvalues<F>(apply: F, dim: usize, iters: usize, stream: &mut RngStream) -> (f64, f64)
where
    F: Fn(&Vector) -> Vector,
{
    let top = power_iteration(&apply, dim, iters, stream);
    let shifted = power_iteration(
        |v| {
            let mut w = v.scale(top);
            w.axpy(-1.0, &apply(v));
            w
        },
        dim,
        iters,
        stream,
    );
    (top - shifted, top)
}
