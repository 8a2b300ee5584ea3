use crate::error::{BilevelError, Result};

use super::Vector;

/// Default step for central differences.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central-difference gradient `(f(x + h e_i) − f(x − h e_i)) / 2h`.
pub fn finite_difference_grad<F>(f: F, x: &Vector, h: f64) -> Result<Vector>
where
    F: Fn(&Vector) -> f64,
{
    if !(h > 0.0) {
        return Err(BilevelError::invalid(format!("finite difference step must be positive, got {h}")));
    }
    let mut grad = Vector::zeros(x.dim());
    let mut probe = x.clone();
    for i in 0..x.dim() {
        let xi = x[i];
        probe[i] = xi + h;
        let plus = f(&probe);
        probe[i] = xi - h;
        let minus = f(&probe);
        probe[i] = xi;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(BilevelError::domain(format!(
                "finite difference: non-finite function value along coordinate {i}"
            )));
        }
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Central-difference directional derivative of a vector-valued map:
/// `(f(x + h d) − f(x − h d)) / 2h`.
pub fn finite_difference_directional<F>(f: F, x: &Vector, dir: &Vector, h: f64) -> Result<Vector>
where
    F: Fn(&Vector) -> Vector,
{
    if !(h > 0.0) {
        return Err(BilevelError::invalid(format!("finite difference step must be positive, got {h}")));
    }
    let mut plus_pt = x.clone();
    plus_pt.axpy(h, dir);
    let mut minus_pt = x.clone();
    minus_pt.axpy(-h, dir);
    let diff = &f(&plus_pt) - &f(&minus_pt);
    let out = diff.div_scalar(2.0 * h);
    out.ensure_finite("finite difference")?;
    Ok(out)
}
