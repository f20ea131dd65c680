//! Discrete AdaBoost over axis-aligned decision stumps.
//!
//! Each round fits the stump minimizing the weighted 0/1 error by a single
//! pass over presorted feature columns, then reweights the training rows so
//! later rounds concentrate on the mistakes of earlier ones.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::sigmoid;

/// Weighted errors below this are treated as a perfect round; the clamp
/// also keeps the vote weight α finite.
const MIN_ERROR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaBoostParams {
    pub n_rounds: usize,
}

impl Default for AdaBoostParams {
    fn default() -> Self {
        Self { n_rounds: 50 }
    }
}

/// One-feature threshold classifier: values below the threshold are
/// assigned `sign`, the rest `-sign` (labels live in ±1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub sign: i8,
}

impl Stump {
    #[inline]
    fn vote(&self, value: f64) -> f64 {
        if value < self.threshold {
            self.sign as f64
        } else {
            -(self.sign as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedStump {
    pub stump: Stump,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostModel {
    pub params: AdaBoostParams,
    n_features: usize,
    rounds: Vec<WeightedStump>,
}

/// Minimum-weighted-error stump, scanning features ascending and cut
/// points ascending with strictly-less updates, so ties resolve to the
/// lowest feature, lowest threshold, and positive-left orientation.
fn best_stump(
    x: &Matrix,
    order: &[Vec<u32>],
    y_pm: &[f64],
    w: &[f64],
) -> Option<(Stump, f64)> {
    let n = w.len();
    let mut w_pos = 0.0;
    let mut w_neg = 0.0;
    for i in 0..n {
        if y_pm[i] > 0.0 {
            w_pos += w[i];
        } else {
            w_neg += w[i];
        }
    }
    let mut best: Option<(Stump, f64)> = None;
    for (f, idx) in order.iter().enumerate() {
        let mut w_pos_left = 0.0;
        let mut w_neg_left = 0.0;
        for i in 1..n {
            let prev = idx[i - 1] as usize;
            if y_pm[prev] > 0.0 {
                w_pos_left += w[prev];
            } else {
                w_neg_left += w[prev];
            }
            let lo = x.get(prev, f);
            let hi = x.get(idx[i] as usize, f);
            if hi <= lo {
                continue;
            }
            let mut threshold = lo + (hi - lo) / 2.0;
            if threshold <= lo {
                threshold = hi;
            }
            // Orientation +1 predicts positive on the left of the cut.
            let err_pos_left = w_neg_left + (w_pos - w_pos_left);
            let err_neg_left = w_pos_left + (w_neg - w_neg_left);
            for (sign, err) in [(1i8, err_pos_left), (-1i8, err_neg_left)] {
                if best.as_ref().is_none_or(|&(_, e)| err < e) {
                    best = Some((
                        Stump {
                            feature: f,
                            threshold,
                            sign,
                        },
                        err,
                    ));
                }
            }
        }
    }
    best
}

pub fn fit(params: &AdaBoostParams, x: &Matrix, y: &[u8]) -> Result<AdaBoostModel> {
    if params.n_rounds == 0 {
        return Err(Error::InvalidArgument("n_rounds must be at least 1".into()));
    }
    let n = x.n_rows();
    let d = x.n_cols();
    let y_pm: Vec<f64> = y.iter().map(|&c| if c == 1 { 1.0 } else { -1.0 }).collect();
    // Sort each feature column once; every round reuses the orders.
    let order: Vec<Vec<u32>> = (0..d)
        .into_par_iter()
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_unstable_by(|&a, &b| {
                x.get(a as usize, f)
                    .partial_cmp(&x.get(b as usize, f))
                    .expect("finite feature values")
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect();
    let mut w = vec![1.0 / n as f64; n];
    let mut rounds = Vec::new();
    for _ in 0..params.n_rounds {
        let Some((stump, eps)) = best_stump(x, &order, &y_pm, &w) else {
            break;
        };
        // A stump no better than reweighted chance ends the boosting run.
        if eps >= 0.5 {
            break;
        }
        let eps_clamped = eps.max(MIN_ERROR);
        let alpha = 0.5 * ((1.0 - eps_clamped) / eps_clamped).ln();
        rounds.push(WeightedStump { stump, alpha });
        if eps < MIN_ERROR {
            break;
        }
        let mut total = 0.0;
        for i in 0..n {
            let h = stump.vote(x.get(i, stump.feature));
            w[i] *= (-alpha * y_pm[i] * h).exp();
            total += w[i];
        }
        for wi in &mut w {
            *wi /= total;
        }
    }
    if rounds.is_empty() {
        return Err(Error::Training(
            "no stump beats chance on this data; boosting cannot start".into(),
        ));
    }
    Ok(AdaBoostModel {
        params: *params,
        n_features: d,
        rounds,
    })
}

impl AdaBoostModel {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn rounds(&self) -> &[WeightedStump] {
        &self.rounds
    }

    /// Squashed weighted vote: σ(Σ αₜ hₜ(x)), so 0.5 sits exactly on the
    /// ensemble's decision boundary.
    pub fn score_one(&self, query: &[f64]) -> f64 {
        let margin: f64 = self
            .rounds
            .iter()
            .map(|r| r.alpha * r.stump.vote(query[r.stump.feature]))
            .sum();
        sigmoid(margin)
    }
}
