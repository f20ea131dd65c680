//! CART decision trees split by Gini impurity decrease, and random forests —
//! bootstrap ensembles of such trees with per-node feature subsampling.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    /// Maximum split depth; `None` grows until purity or `min_split` stops
    /// a branch.
    pub max_depth: Option<usize>,
    /// Minimum node size eligible for splitting.
    pub min_split: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_split: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Candidate features per node; `None` means ⌈√d⌉.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub tree: TreeParams,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: None,
            bootstrap: true,
            tree: TreeParams::default(),
        }
    }
}

/// Tree node in a flat arena; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        /// Positive fraction of the training rows that reached this leaf.
        score: f64,
        n: usize,
    },
    Split {
        feature: usize,
        /// Rows with value < threshold go left.
        threshold: f64,
        left: usize,
        right: usize,
        n: usize,
        /// Gini impurity decrease achieved by this split.
        delta: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub params: TreeParams,
    n_features: usize,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: ForestParams,
    n_features: usize,
    seed: u64,
    trees: Vec<TreeModel>,
}

#[inline]
fn gini(n_pos: usize, n: usize) -> f64 {
    let p = n_pos as f64 / n as f64;
    let q = 1.0 - p;
    1.0 - p * p - q * q
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    delta: f64,
}

/// Best Gini split over the candidate features, or None when no boundary
/// between distinct values exists. Candidates are scanned in ascending
/// feature order and ascending threshold order with strictly-greater
/// updates, so equal-Δ ties resolve to the lowest feature index, then the
/// lowest threshold.
fn best_split(
    x: &Matrix,
    y: &[u8],
    rows: &[usize],
    n_pos_total: usize,
    features: &[usize],
    vals: &mut Vec<(f64, u8)>,
) -> Option<SplitChoice> {
    let n = rows.len();
    let n_f = n as f64;
    let g_parent = gini(n_pos_total, n);
    let mut best: Option<SplitChoice> = None;
    for &f in features {
        vals.clear();
        vals.extend(rows.iter().map(|&i| (x.get(i, f), y[i])));
        vals.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).expect("finite feature values"));
        let mut pos_left = 0usize;
        for i in 1..n {
            pos_left += usize::from(vals[i - 1].1 == 1);
            let lo = vals[i - 1].0;
            let hi = vals[i].0;
            if hi <= lo {
                continue;
            }
            let n_left = i;
            let n_right = n - i;
            let pos_right = n_pos_total - pos_left;
            let delta = g_parent
                - (n_left as f64 / n_f) * gini(pos_left, n_left)
                - (n_right as f64 / n_f) * gini(pos_right, n_right);
            if best.as_ref().is_none_or(|b| delta > b.delta) {
                let mut threshold = lo + (hi - lo) / 2.0;
                // Adjacent floats can round the midpoint back onto lo, which
                // would put lo on the wrong side of `< threshold`.
                if threshold <= lo {
                    threshold = hi;
                }
                best = Some(SplitChoice {
                    feature: f,
                    threshold,
                    delta,
                });
            }
        }
    }
    best
}

/// Grows a tree over the given root rows. `sample_features` fills the
/// candidate feature list for each node (ascending); the work stack is
/// processed in a fixed order so trees are bit-reproducible.
fn grow<F>(x: &Matrix, y: &[u8], params: &TreeParams, root_rows: Vec<usize>, mut sample_features: F) -> Vec<Node>
where
    F: FnMut(&mut Vec<usize>),
{
    let mut nodes = vec![Node::Leaf { score: 0.0, n: 0 }];
    let mut stack = vec![(0usize, root_rows, 0usize)];
    let mut features_buf: Vec<usize> = Vec::new();
    let mut vals_buf: Vec<(f64, u8)> = Vec::new();
    while let Some((slot, rows, depth)) = stack.pop() {
        let n = rows.len();
        let n_pos = rows.iter().filter(|&&i| y[i] == 1).count();
        let score = n_pos as f64 / n as f64;
        let depth_allows = params.max_depth.is_none_or(|limit| depth < limit);
        let splittable = n >= params.min_split && n_pos > 0 && n_pos < n && depth_allows;
        let choice = if splittable {
            sample_features(&mut features_buf);
            best_split(x, y, &rows, n_pos, &features_buf, &mut vals_buf)
        } else {
            None
        };
        match choice {
            // A positive decrease is required to split; Δ == 0 stays a leaf.
            Some(c) if c.delta > 0.0 => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| x.get(i, c.feature) < c.threshold);
                let left = nodes.len();
                nodes.push(Node::Leaf { score: 0.0, n: 0 });
                let right = nodes.len();
                nodes.push(Node::Leaf { score: 0.0, n: 0 });
                nodes[slot] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left,
                    right,
                    n,
                    delta: c.delta,
                };
                stack.push((right, right_rows, depth + 1));
                stack.push((left, left_rows, depth + 1));
            }
            _ => nodes[slot] = Node::Leaf { score, n },
        }
    }
    nodes
}

pub fn fit_tree(params: &TreeParams, x: &Matrix, y: &[u8]) -> Result<TreeModel> {
    if params.min_split < 2 {
        return Err(Error::InvalidArgument(format!(
            "min_split must be at least 2, got {}",
            params.min_split
        )));
    }
    let d = x.n_cols();
    let nodes = grow(x, y, params, (0..x.n_rows()).collect(), |buf| {
        buf.clear();
        buf.extend(0..d);
    });
    Ok(TreeModel {
        params: *params,
        n_features: d,
        nodes,
    })
}

impl TreeModel {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn has_splits(&self) -> bool {
        self.nodes.iter().any(|n| matches!(n, Node::Split { .. }))
    }

    /// Leaf positive fraction reached by the query.
    pub fn score_one(&self, query: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { score, .. } => return *score,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    idx = if query[*feature] < *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Per-feature importance: each split contributes (n_node/n_root)·Δ to
    /// its feature, and the vector is normalized to sum 1 (all zeros for a
    /// split-free tree).
    pub fn importances(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.n_features];
        let root_n = match &self.nodes[0] {
            Node::Leaf { n, .. } | Node::Split { n, .. } => *n as f64,
        };
        for node in &self.nodes {
            if let Node::Split { feature, n, delta, .. } = node {
                imp[*feature] += (*n as f64 / root_n) * delta;
            }
        }
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            for v in &mut imp {
                *v /= total;
            }
        }
        imp
    }
}

pub fn fit_forest(params: &ForestParams, x: &Matrix, y: &[u8], seed: u64) -> Result<ForestModel> {
    if params.n_trees == 0 {
        return Err(Error::InvalidArgument("forest needs at least 1 tree".into()));
    }
    if params.tree.min_split < 2 {
        return Err(Error::InvalidArgument(format!(
            "min_split must be at least 2, got {}",
            params.tree.min_split
        )));
    }
    let d = x.n_cols();
    let mf = match params.max_features {
        None => (d as f64).sqrt().ceil() as usize,
        Some(0) => {
            return Err(Error::InvalidArgument("max_features must be at least 1".into()))
        }
        Some(v) => v.min(d),
    };
    let n = x.n_rows();
    let trees: Vec<TreeModel> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            // Each tree owns a seed derived from (forest seed, tree index),
            // so parallel training cannot perturb the result.
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[t as u64]));
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut scratch: Vec<usize> = (0..d).collect();
            let nodes = grow(x, y, &params.tree, rows, |buf| {
                buf.clear();
                if mf >= d {
                    buf.extend(0..d);
                } else {
                    for i in 0..mf {
                        let j = rng.random_range(i..d);
                        scratch.swap(i, j);
                    }
                    buf.extend_from_slice(&scratch[..mf]);
                    buf.sort_unstable();
                }
            });
            TreeModel {
                params: params.tree,
                n_features: d,
                nodes,
            }
        })
        .collect();
    Ok(ForestModel {
        params: *params,
        n_features: d,
        seed,
        trees,
    })
}

impl ForestModel {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trees(&self) -> &[TreeModel] {
        &self.trees
    }

    /// Mean of the member trees' leaf fractions.
    pub fn score_one(&self, query: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.score_one(query)).sum();
        sum / self.trees.len() as f64
    }

    /// Forest Gini importance: the elementwise mean of the per-tree
    /// normalized importance vectors, taken over the trees that actually
    /// split. Sums to 1 whenever any tree split; all zeros otherwise.
    pub fn gini_importances(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_features];
        let mut n_splitting = 0usize;
        for tree in &self.trees {
            if !tree.has_splits() {
                continue;
            }
            n_splitting += 1;
            for (slot, v) in acc.iter_mut().zip(tree.importances()) {
                *slot += v;
            }
        }
        if n_splitting > 0 {
            for v in &mut acc {
                *v /= n_splitting as f64;
            }
        }
        acc
    }
}
