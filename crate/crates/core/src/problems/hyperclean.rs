use nalgebra::{DMatrix, DVector};

use super::dataset::{Dataset, SplitTag};
use super::{check_inner_batch, check_outer_batch, check_point, finite, BilevelOracle, Split};
use crate::error::{BilevelError, Result};
use crate::numerics::{BatchIndices, Vector};

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Binary cross-entropy of logit `z` against label `y ∈ {0, 1}`.
fn cross_entropy(z: f64, y: f64) -> f64 {
    softplus(z) - y * z
}

#[derive(Clone, Debug)]
pub struct HypercleanSpec {
    pub dataset: Dataset,
    /// Ridge weight `C` of the inner objective.
    pub ridge: f64,
}

/// Data hyper-cleaning on weighted binary logistic regression.
///
/// Outer variable `x = λ ∈ R^{n_train}` (one logit weight per training
/// row), inner variable `y = w ∈ R^d`.
///
/// * inner sample i: `σ(λ_i) CE(wᵀx_i, y_i) + C‖w‖²`
/// * outer sample j: `CE(wᵀx_j, y_j)` over validation rows
#[derive(Clone, Debug)]
pub struct HypercleanProblem {
    train_x: Vec<Vector>,
    train_y: Vec<f64>,
    train_corrupted: Vec<bool>,
    val_x: Vec<Vector>,
    val_y: Vec<f64>,
    test_x: Vec<Vector>,
    test_y: Vec<f64>,
    ridge: f64,
    dim: usize,
}

pub fn make_hyperclean_problem(spec: &HypercleanSpec) -> Result<HypercleanProblem> {
    if !(spec.ridge > 0.0) {
        return Err(BilevelError::invalid(format!("ridge C must be positive, got {}", spec.ridge)));
    }
    let ds = &spec.dataset;
    ds.validate()?;
    let pick = |tag: SplitTag| -> (Vec<Vector>, Vec<f64>, Vec<bool>) {
        let rows = ds.rows(tag);
        (
            rows.iter().map(|&i| ds.features[i].clone()).collect(),
            rows.iter().map(|&i| ds.labels[i] as f64).collect(),
            rows.iter().map(|&i| ds.corruption_mask[i]).collect(),
        )
    };
    let (train_x, train_y, train_corrupted) = pick(SplitTag::Train);
    let (val_x, val_y, _) = pick(SplitTag::Val);
    let (test_x, test_y, _) = pick(SplitTag::Test);
    if train_x.is_empty() || val_x.is_empty() {
        return Err(BilevelError::invalid("hyper-cleaning needs training and validation rows"));
    }
    Ok(HypercleanProblem {
        dim: ds.feature_dim(),
        train_x,
        train_y,
        train_corrupted,
        val_x,
        val_y,
        test_x,
        test_y,
        ridge: spec.ridge,
    })
}

impl HypercleanProblem {
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn train_corrupted(&self) -> &[bool] {
        &self.train_corrupted
    }

    pub fn train_features(&self) -> &[Vector] {
        &self.train_x
    }

    pub fn train_labels(&self) -> &[f64] {
        &self.train_y
    }

    fn split_rows(&self, split: Split) -> (&[Vector], &[f64]) {
        match split {
            Split::Train => (&self.train_x, &self.train_y),
            Split::Validation => (&self.val_x, &self.val_y),
            Split::Test => (&self.test_x, &self.test_y),
        }
    }

    /// Mean cross-entropy of `w` on a split, unweighted and without ridge.
    pub fn mean_cross_entropy(&self, w: &Vector, split: Split) -> f64 {
        let (xs, ys) = self.split_rows(split);
        xs.iter().zip(ys).map(|(x, &y)| cross_entropy(w.dot(x), y)).sum::<f64>() / xs.len() as f64
    }

    pub fn accuracy(&self, w: &Vector, split: Split) -> f64 {
        let (xs, ys) = self.split_rows(split);
        let hits = xs
            .iter()
            .zip(ys)
            .filter(|(x, &y)| ((w.dot(x) > 0.0) as u8 as f64) == y)
            .count();
        hits as f64 / xs.len() as f64
    }

    /// Ridge-logistic fit on the uncorrupted training rows only.
    pub fn clean_oracle_weights(&self) -> Result<Vector> {
        let weights: Vec<f64> = self.train_corrupted.iter().map(|&c| if c { 0.0 } else { 1.0 }).collect();
        fit_weighted_ridge_logistic(&self.train_x, &self.train_y, &weights, self.ridge)
    }
}

impl BilevelOracle for HypercleanProblem {
    fn outer_dim(&self) -> usize {
        self.train_x.len()
    }

    fn inner_dim(&self) -> usize {
        self.dim
    }

    fn n_outer(&self) -> usize {
        self.val_x.len()
    }

    fn n_inner(&self) -> usize {
        self.train_x.len()
    }

    fn strong_convexity(&self) -> Option<f64> {
        Some(2.0 * self.ridge)
    }

    fn inner_smoothness(&self) -> Option<f64> {
        let max_sq = self.train_x.iter().map(Vector::norm_sq).fold(0.0, f64::max);
        Some(0.25 * max_sq + 2.0 * self.ridge)
    }

    fn inner_grad_y(&self, x: &Vector, y: &Vector, batch: &BatchIndices) -> Result<Vector> {
        check_point(self, x, y)?;
        check_inner_batch(self, batch)?;
        let mut acc = Vector::zeros(self.dim);
        for i in batch.iter() {
            let xi = &self.train_x[i];
            let s = sigmoid(y.dot(xi));
            acc.axpy(sigmoid(x[i]) * (s - self.train_y[i]), xi);
        }
        let mut g = acc.div_scalar(batch.len() as f64);
        g.axpy(2.0 * self.ridge, y);
        finite(g, "hyper-cleaning inner gradient")
    }

    fn inner_hvp_yy(&self, x: &Vector, y: &Vector, v: &Vector, batch: &BatchIndices) -> Result<Vector> {
        check_point(self, x, y)?;
        check_inner_batch(self, batch)?;
        v.ensure_dim(self.dim, "hvp direction")?;
        let mut acc = Vector::zeros(self.dim);
        for i in batch.iter() {
            let xi = &self.train_x[i];
            let s = sigmoid(y.dot(xi));
            acc.axpy(sigmoid(x[i]) * s * (1.0 - s) * xi.dot(v), xi);
        }
        let mut h = acc.div_scalar(batch.len() as f64);
        h.axpy(2.0 * self.ridge, v);
        finite(h, "hyper-cleaning hvp")
    }

    fn inner_jvp_xy(&self, x: &Vector, y: &Vector, v: &Vector, batch: &BatchIndices) -> Result<Vector> {
        check_point(self, x, y)?;
        check_inner_batch(self, batch)?;
        v.ensure_dim(self.dim, "jvp direction")?;
        let mut out = Vector::zeros(self.train_x.len());
        for i in batch.iter() {
            let xi = &self.train_x[i];
            let s = sigmoid(y.dot(xi));
            let sl = sigmoid(x[i]);
            out[i] += sl * (1.0 - sl) * (s - self.train_y[i]) * xi.dot(v);
        }
        finite(out.div_scalar(batch.len() as f64), "hyper-cleaning jvp")
    }

    fn outer_grads(&self, x: &Vector, y: &Vector, batch: &BatchIndices) -> Result<(Vector, Vector)> {
        check_point(self, x, y)?;
        check_outer_batch(self, batch)?;
        let mut acc = Vector::zeros(self.dim);
        for j in batch.iter() {
            let xj = &self.val_x[j];
            acc.axpy(sigmoid(y.dot(xj)) - self.val_y[j], xj);
        }
        let gy = finite(acc.div_scalar(batch.len() as f64), "hyper-cleaning outer gradient")?;
        Ok((Vector::zeros(self.train_x.len()), gy))
    }

    fn loss(&self, x: &Vector, y: &Vector, split: Split) -> Result<f64> {
        check_point(self, x, y)?;
        let value = match split {
            Split::Train => {
                let data: f64 = self
                    .train_x
                    .iter()
                    .zip(&self.train_y)
                    .enumerate()
                    .map(|(i, (xi, &yi))| sigmoid(x[i]) * cross_entropy(y.dot(xi), yi))
                    .sum();
                data / self.train_x.len() as f64 + self.ridge * y.norm_sq()
            }
            Split::Validation | Split::Test => {
                if self.split_rows(split).0.is_empty() {
                    return Err(BilevelError::invalid("split has no rows"));
                }
                self.mean_cross_entropy(y, split)
            }
        };
        if !value.is_finite() {
            return Err(BilevelError::domain("hyper-cleaning loss is not finite"));
        }
        Ok(value)
    }
}

/// Minimizes `(1/n) Σ ω_i CE(wᵀx_i, y_i) + C‖w‖²` by damped Newton steps.
pub fn fit_weighted_ridge_logistic(features: &[Vector], labels: &[f64], weights: &[f64], ridge: f64) -> Result<Vector> {
    if features.is_empty() || features.len() != labels.len() || labels.len() != weights.len() {
        return Err(BilevelError::invalid("logistic fit: mismatched or empty inputs"));
    }
    if !(ridge > 0.0) {
        return Err(BilevelError::invalid("logistic fit: ridge must be positive"));
    }
    let d = features[0].dim();
    let n = features.len() as f64;
    let objective = |w: &DVector<f64>| -> f64 {
        let wv = Vector::from(w.as_slice().to_vec());
        let data: f64 = features
            .iter()
            .zip(labels)
            .zip(weights)
            .map(|((x, &y), &om)| om * cross_entropy(wv.dot(x), y))
            .sum();
        data / n + ridge * w.norm_squared()
    };
    let mut w = DVector::zeros(d);
    for _ in 0..200 {
        let wv = Vector::from(w.as_slice().to_vec());
        let mut grad = DVector::zeros(d);
        let mut hess = DMatrix::zeros(d, d);
        for ((x, &y), &om) in features.iter().zip(labels).zip(weights) {
            let s = sigmoid(wv.dot(x));
            let xv = DVector::from_column_slice(x.as_slice());
            grad.axpy(om * (s - y) / n, &xv, 1.0);
            hess.ger(om * s * (1.0 - s) / n, &xv, &xv, 1.0);
        }
        grad.axpy(2.0 * ridge, &w, 1.0);
        for i in 0..d {
            hess[(i, i)] += 2.0 * ridge;
        }
        if grad.norm() <= 1e-12 {
            break;
        }
        let step = hess
            .cholesky()
            .ok_or_else(|| BilevelError::domain("logistic fit: Hessian not positive definite"))?
            .solve(&grad);
        let f0 = objective(&w);
        let slope = grad.dot(&step);
        let mut t = 1.0;
        loop {
            let cand = &w - &step * t;
            if objective(&cand) <= f0 - 1e-4 * t * slope || t < 1e-10 {
                w = cand;
                break;
            }
            t *= 0.5;
        }
    }
    let out = Vector::from(w.as_slice().to_vec());
    out.ensure_finite("logistic fit")?;
    Ok(out)
}
