use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use crate::error::{BilevelError, Result};

/// Dense real vector carrying the outer (`x`) and inner (`y`) variables.
#[derive(Clone, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    /// Wraps `entries`, rejecting empty or non-finite input.
    pub fn try_new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(BilevelError::invalid("vector dimension must be positive"));
        }
        let v = Vector(entries);
        v.ensure_finite("vector entries")?;
        Ok(v)
    }

    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Vector(vec![value; dim])
    }

    /// Unit basis vector `e_i`.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.0[i] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Returns a numeric-domain error naming `what` if any entry is NaN/Inf.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.0.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(BilevelError::domain(format!(
                "{what}: entry {i} is {}",
                self.0[i]
            ))),
        }
    }

    pub fn ensure_dim(&self, dim: usize, what: &str) -> Result<()> {
        if self.dim() != dim {
            return Err(BilevelError::invalid(format!(
                "{what}: expected dimension {dim}, got {}",
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dot: dimension mismatch");
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Vector) {
        assert_eq!(self.dim(), x.dim(), "axpy: dimension mismatch");
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += a * v;
        }
    }

    pub fn add_assign(&mut self, x: &Vector) {
        assert_eq!(self.dim(), x.dim(), "add: dimension mismatch");
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += v;
        }
    }

    pub fn scale(&self, a: f64) -> Vector {
        Vector(self.0.iter().map(|v| a * v).collect())
    }

    pub fn div_scalar(&self, a: f64) -> Vector {
        Vector(self.0.iter().map(|v| v / a).collect())
    }

    /// Squared distance `‖self − other‖²`.
    pub fn dist(&self, other: &Vector) -> f64 {
        self.dist_sq(other).sqrt()
    }

    pub fn dist_sq(&self, other: &Vector) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dist: dimension mismatch");
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for &Vector {
    type Output = Vector;
    fn add(self, rhs: &Vector) -> Vector {
        assert_eq!(self.dim(), rhs.dim(), "add: dimension mismatch");
        Vector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &Vector {
    type Output = Vector;
    fn sub(self, rhs: &Vector) -> Vector {
        assert_eq!(self.dim(), rhs.dim(), "sub: dimension mismatch");
        Vector(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Mul<&Vector> for f64 {
    type Output = Vector;
    fn mul(self, rhs: &Vector) -> Vector {
        rhs.scale(self)
    }
}

impl Neg for &Vector {
    type Output = Vector;
    fn neg(self) -> Vector {
        Vector(self.0.iter().map(|v| -v).collect())
    }
}

/// Sums `vectors` strictly left to right.
///
/// This is the only reduction order used in the crate, so results are
/// bitwise reproducible. An empty list yields the zero vector of `dim`.
pub fn reduce_sum(vectors: &[Vector], dim: usize) -> Result<Vector> {
    let mut acc = Vector::zeros(dim);
    for (i, v) in vectors.iter().enumerate() {
        if v.dim() != dim {
            return Err(BilevelError::invalid(format!(
                "reduce_sum: vector {i} has dimension {}, expected {dim}",
                v.dim()
            )));
        }
        acc.add_assign(v);
    }
    Ok(acc)
}
