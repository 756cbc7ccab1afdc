//! Ridge least squares and L2-regularised logistic regression.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{sigmoid, Samples, Task};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    /// L2 penalty on the weights (never on the intercept).
    pub ridge: f64,
    /// Gradient descent budget for the logistic fit.
    pub max_iter: usize,
    /// Stop once the max-norm of the logistic gradient drops below this.
    pub tol: f64,
}

impl Default for LinearParams {
    fn default() -> Self {
        Self {
            ridge: 1e-6,
            max_iter: 2000,
            tol: 1e-7,
        }
    }
}

impl LinearParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge >= 0.0) || !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("linear: ridge >= 0, tol > 0, max_iter > 0 required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn raw(&self, row: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>()
    }
}

fn design(samples: &Samples) -> (usize, Vec<f64>) {
    let p = samples.flat_width();
    let mut x = Vec::with_capacity(samples.len() * p);
    for i in 0..samples.len() {
        x.extend(samples.flat_row(i));
    }
    (p, x)
}

pub(crate) fn train_linear(samples: &Samples, task: Task, cfg: &LinearParams) -> Result<(LinearModel, usize)> {
    let (p, x) = design(samples);
    match task {
        Task::Regression => Ok((least_squares(&x, p, &samples.y, cfg.ridge)?, 1)),
        Task::Classification => logistic(&x, p, &samples.y, cfg),
    }
}

/// Closed form on centered data: `(XcᵀXc + εI) w = Xcᵀyc`, `b = ȳ − w·x̄`.
fn least_squares(x: &[f64], p: usize, y: &[f64], ridge: f64) -> Result<LinearModel> {
    let n = y.len();
    let mut mean = vec![0.0; p];
    for row in x.chunks(p) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let y_mean = y.iter().sum::<f64>() / n as f64;

    let xc = DMatrix::from_fn(n, p, |i, j| x[i * p + j] - mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut gram = xc.tr_mul(&xc);
    for j in 0..p {
        gram[(j, j)] += ridge.max(1e-12);
    }
    let rhs = xc.tr_mul(&yc);
    let w = gram
        .cholesky()
        .ok_or_else(|| Error::Diverged("normal equations are not positive definite".into()))?
        .solve(&rhs);
    let weights: Vec<f64> = w.iter().copied().collect();
    let bias = y_mean - weights.iter().zip(&mean).map(|(a, b)| a * b).sum::<f64>();
    if !bias.is_finite() || weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged("least squares produced non-finite weights".into()));
    }
    Ok(LinearModel { weights, bias })
}

/// Mean logistic loss plus `ridge/2 ‖w‖²`, minimised by Nesterov's
/// accelerated gradient with step `1/L`.
fn logistic(x: &[f64], p: usize, y: &[f64], cfg: &LinearParams) -> Result<(LinearModel, usize)> {
    let n = y.len();
    let nf = n as f64;
    // Params: p weights then the intercept.
    let dim = p + 1;

    let gradient = |theta: &[f64], grad: &mut [f64]| {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (row, &yi) in x.chunks(p).zip(y) {
            let z = theta[p] + row.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
            let r = sigmoid(z) - yi;
            for (g, v) in grad.iter_mut().zip(row) {
                *g += r * v;
            }
            grad[p] += r;
        }
        for j in 0..dim {
            grad[j] /= nf;
        }
        for j in 0..p {
            grad[j] += cfg.ridge * theta[j];
        }
    };

    let lipschitz = 0.25 * max_eigen_gram(x, p, n) + cfg.ridge;
    let step = 1.0 / lipschitz.max(1e-12);

    let mut theta = vec![0.0; dim];
    let mut prev = theta.clone();
    let mut look = theta.clone();
    let mut grad = vec![0.0; dim];
    let mut t = 1.0f64;
    let mut iters = 0;
    for _ in 0..cfg.max_iter {
        iters += 1;
        gradient(&look, &mut grad);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged("logistic gradient is not finite".into()));
        }
        if grad.iter().fold(0.0f64, |a, g| a.max(g.abs())) < cfg.tol {
            theta.clone_from(&look);
            break;
        }
        prev.clone_from(&theta);
        for j in 0..dim {
            theta[j] = look[j] - step * grad[j];
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        for j in 0..dim {
            look[j] = theta[j] + beta * (theta[j] - prev[j]);
        }
        t = t_next;
    }
    let bias = theta.pop().unwrap_or(0.0);
    Ok((LinearModel { weights: theta, bias }, iters))
}

/// Largest eigenvalue of `X̃ᵀX̃ / n` with `X̃ = [X, 1]`, by power iteration.
fn max_eigen_gram(x: &[f64], p: usize, n: usize) -> f64 {
    let dim = p + 1;
    let mut v = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut lambda = 0.0;
    for _ in 0..100 {
        let mut out = vec![0.0; dim];
        for row in x.chunks(p) {
            let d = v[p] + row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
            for (o, r) in out.iter_mut().zip(row) {
                *o += d * r;
            }
            out[p] += d;
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        let norm = out.iter().map(|o| o * o).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        v = out.into_iter().map(|o| o / norm).collect();
        if (next - lambda).abs() <= 1e-9 * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // Power iteration approaches from below; pad so the step stays safe.
    lambda * 1.01
}
