//! L2-regularized logistic regression trained by full-batch gradient
//! descent with a backtracking (Armijo) line search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::{bce_with_logit, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegParams {
    /// Ridge penalty on the weights (the bias is not penalized).
    pub l2: f64,
    pub max_iter: usize,
    /// Convergence threshold on the gradient infinity norm.
    pub tol: f64,
}

impl Default for LogRegParams {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub params: LogRegParams,
    weights: Vec<f64>,
    bias: f64,
    n_iters: usize,
}

/// Mean cross-entropy plus the ridge term, and its gradient with respect
/// to (weights, bias). The last gradient slot is the bias derivative.
fn loss_and_grad(x: &Matrix, y: &[u8], w: &[f64], b: f64, l2: f64) -> (f64, Vec<f64>) {
    let n = x.n_rows();
    let d = x.n_cols();
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 1];
    for (i, row) in x.rows().enumerate() {
        let z = row.iter().zip(w).map(|(xi, wi)| xi * wi).sum::<f64>() + b;
        let t = y[i] as f64;
        loss += bce_with_logit(z, t);
        let residual = (sigmoid(z) - t) * inv_n;
        for (g, xi) in grad[..d].iter_mut().zip(row) {
            *g += residual * xi;
        }
        grad[d] += residual;
    }
    loss *= inv_n;
    for (g, wi) in grad[..d].iter_mut().zip(w) {
        *g += l2 * wi;
    }
    loss += 0.5 * l2 * w.iter().map(|wi| wi * wi).sum::<f64>();
    (loss, grad)
}

pub fn fit(params: &LogRegParams, x: &Matrix, y: &[u8]) -> Result<LogRegModel> {
    if !(params.l2 >= 0.0) || !params.l2.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "l2 penalty must be finite and non-negative, got {}",
            params.l2
        )));
    }
    if !(params.tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {}",
            params.tol
        )));
    }
    let d = x.n_cols();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let (mut loss, mut grad) = loss_and_grad(x, y, &w, b, params.l2);
    let mut step = 1.0;
    let mut n_iters = 0;
    for _ in 0..params.max_iter {
        let g_inf = grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));
        if g_inf < params.tol {
            break;
        }
        let g_sq: f64 = grad.iter().map(|g| g * g).sum();
        // Backtrack from twice the last accepted step until the Armijo
        // sufficient-decrease condition holds.
        step *= 2.0;
        let accepted = loop {
            let w_new: Vec<f64> = w.iter().zip(&grad).map(|(wi, g)| wi - step * g).collect();
            let b_new = b - step * grad[d];
            let (loss_new, grad_new) = loss_and_grad(x, y, &w_new, b_new, params.l2);
            if loss_new <= loss - 0.5 * step * g_sq {
                break Some((w_new, b_new, loss_new, grad_new));
            }
            step *= 0.5;
            if step < 1e-18 {
                break None;
            }
        };
        match accepted {
            Some((w_new, b_new, loss_new, grad_new)) => {
                w = w_new;
                b = b_new;
                loss = loss_new;
                grad = grad_new;
                n_iters += 1;
            }
            // No descent step exists at representable sizes: converged.
            None => break,
        }
    }
    Ok(LogRegModel {
        params: *params,
        weights: w,
        bias: b,
        n_iters,
    })
}

impl LogRegModel {
    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn n_iters(&self) -> usize {
        self.n_iters
    }

    pub fn score_one(&self, query: &[f64]) -> f64 {
        let z = query
            .iter()
            .zip(&self.weights)
            .map(|(xi, wi)| xi * wi)
            .sum::<f64>()
            + self.bias;
        sigmoid(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn blobs(n_per_class: usize, seed: u64) -> (Matrix, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for label in [0u8, 1] {
            let center = if label == 0 { -1.0 } else { 1.0 };
            for _ in 0..n_per_class {
                rows.push(vec![
                    center + 0.3 * rng.random::<f64>(),
                    center + 0.3 * rng.random::<f64>(),
                ]);
                y.push(label);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn separates_well_separated_blobs() {
        let (x, y) = blobs(100, 60);
        let model = fit(&LogRegParams::default(), &x, &y).unwrap();
        let correct = (0..x.n_rows())
            .filter(|&i| u8::from(model.score_one(x.row(i)) >= 0.5) == y[i])
            .count();
        assert_eq!(correct, x.n_rows());
        assert!(model.n_iters() > 0);
    }

    #[test]
    fn symmetric_data_keeps_the_bias_near_zero() {
        // Mirror-symmetric classes: the optimum passes through the origin.
        let rows = vec![
            vec![-2.0, -1.0],
            vec![-1.0, -2.0],
            vec![2.0, 1.0],
            vec![1.0, 2.0],
        ];
        let y = vec![0u8, 0, 1, 1];
        let x = Matrix::from_rows(&rows).unwrap();
        let model = fit(&LogRegParams::default(), &x, &y).unwrap();
        assert!(model.bias().abs() < 0.1, "bias = {}", model.bias());
        assert!((model.score_one(&[0.0, 0.0]) - 0.5).abs() < 0.05);
    }

    #[test]
    fn descent_lowers_the_training_loss() {
        let (x, y) = blobs(50, 61);
        let zero_loss = loss_and_grad(&x, &y, &vec![0.0; 2], 0.0, 1e-4).0;
        let model = fit(&LogRegParams::default(), &x, &y).unwrap();
        let final_loss = loss_and_grad(&x, &y, model.weights(), model.bias(), 1e-4).0;
        assert!(final_loss < zero_loss);
        // At w = 0 the loss is ln 2 for any data.
        assert!((zero_loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = blobs(60, 62);
        let a = fit(&LogRegParams::default(), &x, &y).unwrap();
        let b = fit(&LogRegParams::default(), &x, &y).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ridge_shrinks_the_weights() {
        let (x, y) = blobs(60, 63);
        let light = fit(
            &LogRegParams {
                l2: 1e-6,
                ..LogRegParams::default()
            },
            &x,
            &y,
        )
        .unwrap();
        let heavy = fit(
            &LogRegParams {
                l2: 1.0,
                ..LogRegParams::default()
            },
            &x,
            &y,
        )
        .unwrap();
        let norm = |m: &LogRegModel| m.weights().iter().map(|w| w * w).sum::<f64>();
        assert!(norm(&heavy) < norm(&light));
    }

    #[test]
    fn rejects_bad_params() {
        let (x, y) = blobs(10, 64);
        assert!(fit(
            &LogRegParams {
                l2: -1.0,
                ..LogRegParams::default()
            },
            &x,
            &y
        )
        .is_err());
        assert!(fit(
            &LogRegParams {
                tol: 0.0,
                ..LogRegParams::default()
            },
            &x,
            &y
        )
        .is_err());
    }
}
