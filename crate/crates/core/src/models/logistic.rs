use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, dot, norm};

const PROB_FLOOR: f64 = 1e-15;

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticOptions {
    /// L2 strength on the weights (intercept unpenalized).
    pub lambda: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            lambda: 1.0,
            max_iterations: 500,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticMeta {
    pub lambda: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Set when the training labels held a single class; the model then
    /// predicts the base rate everywhere.
    #[serde(default)]
    pub constant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub meta: LogisticMeta,
}

impl LogisticModel {
    pub fn zeros(n_features: usize) -> Self {
        LogisticModel {
            weights: vec![0.0; n_features],
            intercept: 0.0,
            meta: LogisticMeta {
                lambda: 0.0,
                iterations: 0,
                gradient_norm: 0.0,
                constant: false,
            },
        }
    }

    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn decision(&self, row: &[f64]) -> f64 {
        self.intercept + dot(&self.weights, row)
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.decision(row)).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    }
}

fn check_matrix(x: &[Vec<f64>], y: &[bool]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let d = x.first().ok_or(Error::Empty("training matrix"))?.len();
    for (i, row) in x.iter().enumerate() {
        if row.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: row.len(),
            });
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i, column: j });
        }
    }
    Ok(d)
}

/// Penalized negative log-likelihood, summed over rows.
fn objective(x: &[Vec<f64>], y: &[bool], theta: &[f64], lambda: f64) -> f64 {
    let (b, w) = (theta[0], &theta[1..]);
    let nll: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &label)| {
            let z = b + dot(w, row);
            softplus(z) - if label { z } else { 0.0 }
        })
        .sum();
    nll + 0.5 * lambda * dot(w, w)
}

const STALL_STEP: f64 = 1e-12;

/// L2-regularized logistic regression fitted by damped Newton steps from a
/// zero start.
pub fn train_logistic(x: &[Vec<f64>], y: &[bool], opts: &LogisticOptions) -> Result<LogisticModel> {
    let d = check_matrix(x, y)?;
    let n_pos = y.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == y.len() {
        let rate = (n_pos as f64 / y.len() as f64).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        warn!(rows = y.len(), rate, "single-class training set; fitting a constant model");
        return Ok(LogisticModel {
            weights: vec![0.0; d],
            intercept: (rate / (1.0 - rate)).ln(),
            meta: LogisticMeta {
                lambda: opts.lambda,
                iterations: 0,
                gradient_norm: 0.0,
                constant: true,
            },
        });
    }

    let p = d + 1;
    let mut theta = vec![0.0; p];
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    while iterations < opts.max_iterations {
        let mut grad = vec![0.0; p];
        let mut hess = vec![vec![0.0; p]; p];
        for (row, &label) in x.iter().zip(y) {
            let z = theta[0] + dot(&theta[1..], row);
            let prob = sigmoid(z);
            let r = prob - if label { 1.0 } else { 0.0 };
            let s = prob * (1.0 - prob);
            grad[0] += r;
            hess[0][0] += s;
            for j in 0..d {
                grad[j + 1] += r * row[j];
                hess[0][j + 1] += s * row[j];
                for k in j..d {
                    hess[j + 1][k + 1] += s * row[j] * row[k];
                }
            }
        }
        for j in 1..p {
            grad[j] += opts.lambda * theta[j];
            hess[j][j] += opts.lambda;
        }
        for j in 0..p {
            for k in 0..j {
                hess[j][k] = hess[k][j];
            }
        }
        grad_norm = norm(&grad);
        if grad_norm <= opts.tolerance {
            break;
        }
        iterations += 1;

        let step = match cholesky_solve(&hess, &grad) {
            Some(s) => s,
            None => {
                // Tiny ridge keeps the step defined when the Hessian is singular.
                for (j, row) in hess.iter_mut().enumerate() {
                    row[j] += 1e-8;
                }
                cholesky_solve(&hess, &grad).unwrap_or_else(|| grad.clone())
            }
        };
        let current = objective(x, y, &theta, opts.lambda);
        let mut t = 1.0;
        let moved = loop {
            let candidate: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a - t * s).collect();
            if objective(x, y, &candidate, opts.lambda) <= current || t < 1e-10 {
                let moved = candidate.iter().zip(&theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                theta = candidate;
                break moved;
            }
            t *= 0.5;
        };
        // At the optimum the gradient of a large sum can sit just above the
        // tolerance from rounding alone; a vanishing step means we are there.
        if moved < STALL_STEP {
            break;
        }
    }

    Ok(LogisticModel {
        intercept: theta[0],
        weights: theta[1..].to_vec(),
        meta: LogisticMeta {
            lambda: opts.lambda,
            iterations,
            gradient_norm: grad_norm,
            constant: false,
        },
    })
}
