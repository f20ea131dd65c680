//! Imbalance-aware evaluation: confusion counts, threshold metrics, ROC
//! and precision-recall curves, the repeated-split Gini importance study,
//! and the kernel × hold-out × model experiment grid.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, FeatureKind, SplitSpec};
use crate::grid::{LabelGrid, ThermalFeatureGrid};
use crate::models::{self, ForestParams, Hyperparams, ModelKind};
use crate::resample::{borderline_smote, SmoteConfig};
use crate::seeds;

/// Binary confusion counts. JSON field names are the conventional tp, fp,
/// fn, tn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    #[serde(rename = "tp")]
    pub true_pos: usize,
    #[serde(rename = "fp")]
    pub false_pos: usize,
    #[serde(rename = "fn")]
    pub false_neg: usize,
    #[serde(rename = "tn")]
    pub true_neg: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

fn check_binary(name: &str, values: &[u8]) -> Result<()> {
    if let Some(bad) = values.iter().find(|&&v| v > 1) {
        return Err(Error::InvalidArgument(format!(
            "{name} must contain only 0 or 1, got {bad}"
        )));
    }
    Ok(())
}

/// Tallies predictions against truth.
pub fn confusion(y_true: &[u8], y_pred: &[u8]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::InvalidArgument(format!(
            "{} truth labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    check_binary("truth labels", y_true)?;
    check_binary("predictions", y_pred)?;
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (1, 1) => cm.true_pos += 1,
            (0, 1) => cm.false_pos += 1,
            (1, 0) => cm.false_neg += 1,
            _ => cm.true_neg += 1,
        }
    }
    Ok(cm)
}

/// Scalar metrics of a confusion matrix. Zero-denominator cases come back
/// as 0 with `degenerate` set rather than NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub degenerate: bool,
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn classification_metrics(cm: &ConfusionMatrix) -> ClassMetrics {
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    let precision = ratio(cm.true_pos, cm.true_pos + cm.false_pos);
    let recall = ratio(cm.true_pos, cm.true_pos + cm.false_neg);
    let accuracy = ratio(cm.true_pos + cm.true_neg, cm.total());
    let p = precision.unwrap_or(0.0);
    let r = recall.unwrap_or(0.0);
    let f1 = f1_from(p, r);
    let degenerate =
        precision.is_none() || recall.is_none() || accuracy.is_none() || p + r == 0.0;
    ClassMetrics {
        precision: p,
        recall: r,
        f1,
        accuracy: accuracy.unwrap_or(0.0),
        degenerate,
    }
}

fn check_scored(y_true: &[u8], scores: &[f64]) -> Result<()> {
    if y_true.len() != scores.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels vs {} scores",
            y_true.len(),
            scores.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    check_binary("truth labels", y_true)?;
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite score {bad}")));
    }
    Ok(())
}

/// Indices sorted by score descending; score ties fall back to index order
/// so the sweep below is fully deterministic.
fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    order
}

/// ROC curve and its trapezoidal area. Thresholds sweep the distinct score
/// values descending; each tie group contributes one vertex, so tied scores
/// produce diagonal segments whose trapezoids award exactly half credit —
/// making the area equal the pairwise concordance statistic.
pub fn roc_auc(y_true: &[u8], scores: &[f64]) -> Result<(Vec<(f64, f64)>, f64)> {
    check_scored(y_true, scores)?;
    let n_pos = y_true.iter().filter(|&&v| v == 1).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument(
            "ROC-AUC is undefined when the truth has a single class".into(),
        ));
    }
    let order = descending_order(scores);
    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let group_score = scores[order[i]];
        while i < order.len() && scores[order[i]] == group_score {
            if y_true[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = *points.last().expect("seeded with the origin");
        let next = (fp as f64 / n_neg as f64, tp as f64 / n_pos as f64);
        auc += (next.0 - prev.0) * (next.1 + prev.1) / 2.0;
        points.push(next);
    }
    Ok((points, auc))
}

/// Precision-recall curve: one (recall, precision) vertex per distinct
/// score threshold, swept descending. Recall is non-decreasing and the
/// final vertex is (1, positive prevalence).
pub fn pr_curve(y_true: &[u8], scores: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_scored(y_true, scores)?;
    let n_pos = y_true.iter().filter(|&&v| v == 1).count();
    if n_pos == 0 {
        return Err(Error::InvalidArgument(
            "precision-recall curve needs at least one positive".into(),
        ));
    }
    let order = descending_order(scores);
    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let group_score = scores[order[i]];
        while i < order.len() && scores[order[i]] == group_score {
            if y_true[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((tp as f64 / n_pos as f64, tp as f64 / (tp + fp) as f64));
    }
    Ok(points)
}

/// Full evaluation of one scored test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub confusion: ConfusionMatrix,
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub predicted_positive_count: usize,
    pub ground_truth_positive_count: usize,
    pub roc_points: Vec<(f64, f64)>,
    pub pr_points: Vec<(f64, f64)>,
}

/// Evaluates scores against truth at a hard-prediction threshold.
pub fn evaluate(y_true: &[u8], scores: &[f64], threshold: f64) -> Result<EvalReport> {
    if !threshold.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "threshold must be finite, got {threshold}"
        )));
    }
    let y_pred: Vec<u8> = scores.iter().map(|&s| u8::from(s >= threshold)).collect();
    let cm = confusion(y_true, &y_pred)?;
    let metrics = classification_metrics(&cm);
    let (roc_points, auc) = roc_auc(y_true, scores)?;
    let pr_points = pr_curve(y_true, scores)?;
    Ok(EvalReport {
        confusion: cm,
        auc,
        precision: metrics.precision,
        recall: metrics.recall,
        f1: metrics.f1,
        accuracy: metrics.accuracy,
        predicted_positive_count: cm.true_pos + cm.false_pos,
        ground_truth_positive_count: cm.true_pos + cm.false_neg,
        roc_points,
        pr_points,
    })
}

/// Renders curve vertices as a two-column CSV.
pub fn points_csv(x_name: &str, y_name: &str, points: &[(f64, f64)]) -> String {
    let mut text = format!("{x_name},{y_name}\n");
    for (x, y) in points {
        text.push_str(&format!("{x},{y}\n"));
    }
    text
}

/// Writes curve vertices as a two-column CSV.
pub fn store_points_csv(path: &Path, x_name: &str, y_name: &str, points: &[(f64, f64)]) -> Result<()> {
    std::fs::write(path, points_csv(x_name, y_name, points))?;
    Ok(())
}

/// Configuration of the repeated-split importance study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub n_splits: usize,
    pub train_fraction: f64,
    pub forest: ForestParams,
    pub smote: SmoteConfig,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n_splits: 100,
            train_fraction: 0.7,
            forest: ForestParams::default(),
            smote: SmoteConfig::default(),
            seed: 0,
        }
    }
}

/// Mean importance split by thermal field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindMeans {
    pub tau_mean: f64,
    pub tmax_mean: f64,
}

/// Averaged Gini importances over repeated random splits, with layer and
/// field aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub kernel_k: usize,
    pub n_splits: usize,
    pub train_fraction: f64,
    pub seed: u64,
    /// Set when too few splits were run for the averages to mean much.
    pub low_replication: bool,
    /// Per-feature mean importance, length 2k³, in feature-column order.
    pub mean_score: Vec<f64>,
    pub per_kind: KindMeans,
    /// Layer offset (0 is the central voxel's layer, positive is above)
    /// to the mean score of that layer's features.
    pub per_layer: BTreeMap<i64, f64>,
}

/// Aggregates a per-feature vector by field kind and by layer offset.
fn aggregate_scores(mean_score: &[f64], k: usize) -> Result<(KindMeans, BTreeMap<i64, f64>)> {
    let mut kind_sums = [0.0f64; 2];
    let mut kind_counts = [0usize; 2];
    let mut layer_sums: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for (i, &v) in mean_score.iter().enumerate() {
        let (kind, (_, _, dz)) = features::feature_index_meta(i, k)?;
        let slot = match kind {
            FeatureKind::Tau => 0,
            FeatureKind::Tmax => 1,
        };
        kind_sums[slot] += v;
        kind_counts[slot] += 1;
        let entry = layer_sums.entry(dz).or_insert((0.0, 0));
        entry.0 += v;
        entry.1 += 1;
    }
    let per_kind = KindMeans {
        tau_mean: kind_sums[0] / kind_counts[0] as f64,
        tmax_mean: kind_sums[1] / kind_counts[1] as f64,
    };
    let per_layer = layer_sums
        .into_iter()
        .map(|(dz, (sum, count))| (dz, sum / count as f64))
        .collect();
    Ok((per_kind, per_layer))
}

/// Repeats the full train pipeline (split → min-max scale fit on train →
/// Borderline-SMOTE → random forest) over `n_splits` seed-derived random
/// splits and averages the per-split Gini importance vectors elementwise.
/// Splits run in parallel; the averaging order is fixed, so the report is
/// identical for any worker count.
pub fn importance_study(
    thermal: &ThermalFeatureGrid,
    labels: &LabelGrid,
    k: usize,
    cfg: &StudyConfig,
) -> Result<ImportanceReport> {
    if cfg.n_splits == 0 {
        return Err(Error::InvalidArgument("the study needs at least 1 split".into()));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must be in (0, 1), got {}",
            cfg.train_fraction
        )));
    }
    let (fm, y) = features::extract_kernel(thermal, labels, k)?;
    let x = fm.data();
    let vectors: Vec<Vec<f64>> = (0..cfg.n_splits)
        .into_par_iter()
        .map(|s| -> Result<Vec<f64>> {
            let fail = |stage: &str, e: Error| {
                Error::Training(format!("importance split {s}, {stage}: {e}"))
            };
            let spec = SplitSpec {
                test_fraction: 1.0 - cfg.train_fraction,
                seed: seeds::derive(cfg.seed, &[s as u64, 0]),
            };
            let (train, _) = features::split(x.n_rows(), spec).map_err(|e| fail("split", e))?;
            let x_train = x.select_rows(&train);
            let y_train: Vec<u8> = train.iter().map(|&i| y[i]).collect();
            let scale = features::fit_minmax(&x_train).map_err(|e| fail("scale", e))?;
            let x_scaled = features::apply_minmax(&x_train, &scale).map_err(|e| fail("scale", e))?;
            let smote_cfg = SmoteConfig {
                seed: seeds::derive(cfg.seed, &[s as u64, 1]),
                ..cfg.smote
            };
            let balanced =
                borderline_smote(&x_scaled, &y_train, &smote_cfg).map_err(|e| fail("smote", e))?;
            let forest = models::tree::fit_forest(
                &cfg.forest,
                &balanced.x,
                &balanced.y,
                seeds::derive(cfg.seed, &[s as u64, 2]),
            )
            .map_err(|e| fail("forest", e))?;
            Ok(forest.gini_importances())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean_score = vec![0.0; x.n_cols()];
    for v in &vectors {
        for (acc, value) in mean_score.iter_mut().zip(v) {
            *acc += value;
        }
    }
    for acc in &mut mean_score {
        *acc /= cfg.n_splits as f64;
    }
    let (per_kind, per_layer) = aggregate_scores(&mean_score, k)?;
    Ok(ImportanceReport {
        kernel_k: k,
        n_splits: cfg.n_splits,
        train_fraction: cfg.train_fraction,
        seed: cfg.seed,
        low_replication: cfg.n_splits < 2,
        mean_score,
        per_kind,
        per_layer,
    })
}

/// Which rows the min-max scaler is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleFit {
    /// Fit on training rows only (no information from the test side).
    Train,
    /// Fit on the full dataset before splitting.
    All,
}

/// Configuration of the kernel × hold-out × model experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TableConfig {
    pub kernels: Vec<usize>,
    pub holdouts: Vec<f64>,
    pub models: Vec<ModelKind>,
    pub hp: Hyperparams,
    pub smote: SmoteConfig,
    pub scale_fit: ScaleFit,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self {
            kernels: vec![1, 3, 5, 7],
            holdouts: vec![0.07, 0.10, 0.20, 0.30, 0.40],
            models: ModelKind::ALL.to_vec(),
            hp: Hyperparams::default(),
            smote: SmoteConfig::default(),
            scale_fit: ScaleFit::Train,
            threshold: models::DEFAULT_SCORE_THRESHOLD,
            seed: 0,
        }
    }
}

/// One cell of the experiment grid: the evaluation report plus the scored
/// test rows, kept for prediction-map export.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentCell {
    pub model: ModelKind,
    pub kernel_k: usize,
    pub holdout: f64,
    pub report: EvalReport,
    /// Voxel coordinates of the test rows, aligned with truth/predictions.
    pub test_coords: Vec<(usize, usize, usize)>,
    pub truth: Vec<u8>,
    pub predictions: Vec<u8>,
}

/// Runs the full grid. Training happens on SMOTE-balanced train rows;
/// every report is computed on the untouched, unbalanced test rows. Cell
/// seeds derive from (master seed, kernel, holdout, model), so the table
/// is reproducible regardless of evaluation order or worker count.
pub fn experiment_table(
    thermal: &ThermalFeatureGrid,
    labels: &LabelGrid,
    cfg: &TableConfig,
) -> Result<Vec<ExperimentCell>> {
    if cfg.kernels.is_empty() || cfg.holdouts.is_empty() || cfg.models.is_empty() {
        return Err(Error::InvalidArgument(
            "kernel, holdout, and model lists must all be non-empty".into(),
        ));
    }
    for &h in &cfg.holdouts {
        if !(h > 0.0 && h < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "holdout fractions must be in (0, 1), got {h}"
            )));
        }
    }
    let mut cells = Vec::with_capacity(cfg.kernels.len() * cfg.holdouts.len() * cfg.models.len());
    for (ki, &k) in cfg.kernels.iter().enumerate() {
        let (fm, y) = features::extract_kernel(thermal, labels, k)
            .map_err(|e| Error::InvalidArgument(format!("kernel K{k}: {e}")))?;
        let x = fm.data();
        for (hi, &holdout) in cfg.holdouts.iter().enumerate() {
            let cell = |stage: &str, e: Error| {
                Error::Training(format!("cell K{k}, holdout {holdout}, {stage}: {e}"))
            };
            let spec = SplitSpec {
                test_fraction: holdout,
                seed: seeds::derive(cfg.seed, &[1, ki as u64, hi as u64]),
            };
            let (train, test) = features::split(x.n_rows(), spec).map_err(|e| cell("split", e))?;
            let x_train = x.select_rows(&train);
            let y_train: Vec<u8> = train.iter().map(|&i| y[i]).collect();
            let x_test = x.select_rows(&test);
            let y_test: Vec<u8> = test.iter().map(|&i| y[i]).collect();
            let scale = match cfg.scale_fit {
                ScaleFit::Train => features::fit_minmax(&x_train),
                ScaleFit::All => features::fit_minmax(x),
            }
            .map_err(|e| cell("scale", e))?;
            let x_train = features::apply_minmax(&x_train, &scale).map_err(|e| cell("scale", e))?;
            let x_test = features::apply_minmax(&x_test, &scale).map_err(|e| cell("scale", e))?;
            let smote_cfg = SmoteConfig {
                seed: seeds::derive(cfg.seed, &[2, ki as u64, hi as u64]),
                ..cfg.smote
            };
            let balanced =
                borderline_smote(&x_train, &y_train, &smote_cfg).map_err(|e| cell("smote", e))?;
            let test_coords: Vec<(usize, usize, usize)> =
                test.iter().map(|&i| fm.row_coords()[i]).collect();
            for (mi, &kind) in cfg.models.iter().enumerate() {
                let model_seed = seeds::derive(cfg.seed, &[3, ki as u64, hi as u64, mi as u64]);
                let stage = |phase: &str, e: Error| cell(&format!("{kind} {phase}"), e);
                let model = models::train(kind, &cfg.hp, &balanced.x, &balanced.y, model_seed)
                    .map_err(|e| stage("train", e))?;
                let scores = model.score(&x_test).map_err(|e| stage("score", e))?;
                let report =
                    evaluate(&y_test, &scores, cfg.threshold).map_err(|e| stage("evaluate", e))?;
                let predictions = scores.iter().map(|&s| u8::from(s >= cfg.threshold)).collect();
                cells.push(ExperimentCell {
                    model: kind,
                    kernel_k: k,
                    holdout,
                    report,
                    test_coords: test_coords.clone(),
                    truth: y_test.clone(),
                    predictions,
                });
            }
        }
    }
    Ok(cells)
}
