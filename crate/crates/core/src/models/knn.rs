//! k-nearest-neighbors classifier: stores the training set and scores a
//! query by the positive fraction among its k nearest rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnParams {
    pub k: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self { k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    k: usize,
    train_x: Matrix,
    train_y: Vec<u8>,
}

pub fn fit(params: &KnnParams, x: &Matrix, y: &[u8]) -> Result<KnnModel> {
    if params.k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if params.k > x.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "k={} exceeds the {} training rows",
            params.k,
            x.n_rows()
        )));
    }
    Ok(KnnModel {
        k: params.k,
        train_x: x.clone(),
        train_y: y.to_vec(),
    })
}

impl KnnModel {
    pub fn n_features(&self) -> usize {
        self.train_x.n_cols()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Fraction of positive labels among the k nearest training rows.
    /// Distance ties resolve toward the lower training index, so scoring is
    /// fully deterministic.
    pub fn score_one(&self, query: &[f64]) -> f64 {
        let mut dists: Vec<(f64, usize)> = (0..self.train_x.n_rows())
            .map(|i| (squared_distance(query, self.train_x.row(i)), i))
            .collect();
        let total_order = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1))
        };
        if self.k < dists.len() {
            dists.select_nth_unstable_by(self.k, total_order);
            dists.truncate(self.k);
        }
        dists.sort_unstable_by(total_order);
        let positives = dists
            .iter()
            .take(self.k)
            .filter(|&&(_, i)| self.train_y[i] == 1)
            .count();
        positives as f64 / self.k as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_model(points: &[(f64, u8)], k: usize) -> KnnModel {
        let rows: Vec<Vec<f64>> = points.iter().map(|&(v, _)| vec![v]).collect();
        let y: Vec<u8> = points.iter().map(|&(_, c)| c).collect();
        fit(&KnnParams { k }, &Matrix::from_rows(&rows).unwrap(), &y).unwrap()
    }

    #[test]
    fn vote_fraction_of_three_neighbors() {
        // Query at 0: nearest three are 1, 2, 3 labeled 1, 1, 0 → 2/3.
        let model = line_model(&[(1.0, 1), (2.0, 1), (3.0, 0), (10.0, 0), (11.0, 0)], 3);
        let score = model.score_one(&[0.0]);
        assert!((score - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn distance_ties_go_to_the_lower_index() {
        // Rows 0 and 1 are equidistant from the query; with k=1 the vote is
        // row 0's label.
        let model = line_model(&[(-1.0, 1), (1.0, 0)], 1);
        assert_eq!(model.score_one(&[0.0]), 1.0);
        let model = line_model(&[(-1.0, 0), (1.0, 1)], 1);
        assert_eq!(model.score_one(&[0.0]), 0.0);
    }

    #[test]
    fn single_class_training_is_allowed() {
        let model = line_model(&[(0.0, 1), (1.0, 1), (2.0, 1)], 2);
        assert_eq!(model.score_one(&[0.5]), 1.0);
    }

    #[test]
    fn k_equal_to_n_uses_everyone() {
        let model = line_model(&[(0.0, 1), (1.0, 0), (2.0, 0), (3.0, 0)], 4);
        assert_eq!(model.score_one(&[0.0]), 0.25);
    }

    #[test]
    fn fit_rejects_bad_k() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(fit(&KnnParams { k: 0 }, &x, &[0, 1]).is_err());
        assert!(fit(&KnnParams { k: 3 }, &x, &[0, 1]).is_err());
    }
}
