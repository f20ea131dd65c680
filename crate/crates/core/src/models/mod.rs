//! Six classifier families — k-nearest neighbors, decision tree, random
//! forest, logistic regression, AdaBoost, and a multi-layer perceptron —
//! implemented from first principles behind one train/score/predict
//! contract. Scores always lie in [0, 1]; hard predictions threshold the
//! score at 0.5 unless told otherwise.

pub mod adaboost;
pub mod knn;
pub mod linear;
pub mod mlp;
pub mod tree;

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use adaboost::{AdaBoostModel, AdaBoostParams};
pub use knn::{KnnModel, KnnParams};
pub use linear::{LogRegModel, LogRegParams};
pub use mlp::{MlpModel, MlpParams};
pub use tree::{ForestModel, ForestParams, TreeModel, TreeParams};

/// Score cutoff for hard predictions unless a caller overrides it.
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.5;

/// Numerically stable logistic function.
#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit against a 0/1 target, computed without
/// ever exponentiating a large positive number.
#[inline]
pub(crate) fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// The classifier families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Knn,
    DecisionTree,
    RandomForest,
    LogisticRegression,
    AdaBoost,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Knn,
        ModelKind::DecisionTree,
        ModelKind::RandomForest,
        ModelKind::LogisticRegression,
        ModelKind::AdaBoost,
        ModelKind::Mlp,
    ];

    /// Short code used in config files and table output.
    pub fn code(self) -> &'static str {
        match self {
            ModelKind::Knn => "knn",
            ModelKind::DecisionTree => "dt",
            ModelKind::RandomForest => "rf",
            ModelKind::LogisticRegression => "lr",
            ModelKind::AdaBoost => "adaboost",
            ModelKind::Mlp => "mlp",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ModelKind::Knn => "KNN",
            ModelKind::DecisionTree => "DT",
            ModelKind::RandomForest => "RF",
            ModelKind::LogisticRegression => "LR",
            ModelKind::AdaBoost => "AdaBoost",
            ModelKind::Mlp => "MLP",
        };
        f.write_str(name)
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "knn" => Ok(ModelKind::Knn),
            "dt" | "tree" | "decision_tree" => Ok(ModelKind::DecisionTree),
            "rf" | "forest" | "random_forest" => Ok(ModelKind::RandomForest),
            "lr" | "logreg" | "logistic_regression" => Ok(ModelKind::LogisticRegression),
            "adaboost" | "ada" => Ok(ModelKind::AdaBoost),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::InvalidArgument(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Hyperparameters for every family, all config-overridable.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub knn: KnnParams,
    pub tree: TreeParams,
    pub forest: ForestParams,
    pub logreg: LogRegParams,
    pub adaboost: AdaBoostParams,
    pub mlp: MlpParams,
}

/// A fitted classifier of any family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TrainedModel {
    Knn(KnnModel),
    DecisionTree(TreeModel),
    RandomForest(ForestModel),
    LogisticRegression(LogRegModel),
    AdaBoost(AdaBoostModel),
    Mlp(MlpModel),
}

/// Trains one model family on a 0/1-labeled feature matrix. Deterministic
/// for a given (kind, hyperparameters, data, seed): repeated calls fit
/// bit-identical models regardless of worker count.
pub fn train(
    kind: ModelKind,
    hp: &Hyperparams,
    x: &Matrix,
    y: &[u8],
    seed: u64,
) -> Result<TrainedModel> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty training matrix".into()));
    }
    if y.len() != x.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} training rows",
            y.len(),
            x.n_rows()
        )));
    }
    if let Some(bad) = y.iter().find(|&&v| v > 1) {
        return Err(Error::InvalidArgument(format!(
            "labels must be 0 or 1, got {bad}"
        )));
    }
    let has_pos = y.contains(&1);
    let has_neg = y.contains(&0);
    if kind != ModelKind::Knn && !(has_pos && has_neg) {
        return Err(Error::Training(format!(
            "{kind} needs both classes in the training set"
        )));
    }
    Ok(match kind {
        ModelKind::Knn => TrainedModel::Knn(knn::fit(&hp.knn, x, y)?),
        ModelKind::DecisionTree => TrainedModel::DecisionTree(tree::fit_tree(&hp.tree, x, y)?),
        ModelKind::RandomForest => {
            TrainedModel::RandomForest(tree::fit_forest(&hp.forest, x, y, seed)?)
        }
        ModelKind::LogisticRegression => {
            TrainedModel::LogisticRegression(linear::fit(&hp.logreg, x, y)?)
        }
        ModelKind::AdaBoost => TrainedModel::AdaBoost(adaboost::fit(&hp.adaboost, x, y)?),
        ModelKind::Mlp => TrainedModel::Mlp(mlp::fit(&hp.mlp, x, y, seed)?),
    })
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Knn(_) => ModelKind::Knn,
            TrainedModel::DecisionTree(_) => ModelKind::DecisionTree,
            TrainedModel::RandomForest(_) => ModelKind::RandomForest,
            TrainedModel::LogisticRegression(_) => ModelKind::LogisticRegression,
            TrainedModel::AdaBoost(_) => ModelKind::AdaBoost,
            TrainedModel::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            TrainedModel::Knn(m) => m.n_features(),
            TrainedModel::DecisionTree(m) => m.n_features(),
            TrainedModel::RandomForest(m) => m.n_features(),
            TrainedModel::LogisticRegression(m) => m.n_features(),
            TrainedModel::AdaBoost(m) => m.n_features(),
            TrainedModel::Mlp(m) => m.n_features(),
        }
    }

    /// Positive-class score in [0, 1] for one feature vector.
    pub fn score_one(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.n_features());
        match self {
            TrainedModel::Knn(m) => m.score_one(x),
            TrainedModel::DecisionTree(m) => m.score_one(x),
            TrainedModel::RandomForest(m) => m.score_one(x),
            TrainedModel::LogisticRegression(m) => m.score_one(x),
            TrainedModel::AdaBoost(m) => m.score_one(x),
            TrainedModel::Mlp(m) => m.score_one(x),
        }
    }

    /// Scores every row. Rows are independent, so this parallelizes freely
    /// without affecting the result.
    pub fn score(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.n_cols() != self.n_features() {
            return Err(Error::InvalidArgument(format!(
                "model expects {} features, matrix has {} columns",
                self.n_features(),
                x.n_cols()
            )));
        }
        Ok((0..x.n_rows())
            .into_par_iter()
            .map(|i| self.score_one(x.row(i)))
            .collect())
    }

    pub fn predict_with_threshold(&self, x: &Matrix, threshold: f64) -> Result<Vec<u8>> {
        Ok(self
            .score(x)?
            .into_iter()
            .map(|s| u8::from(s >= threshold))
            .collect())
    }

    /// Hard 0/1 predictions at the default 0.5 score threshold.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<u8>> {
        self.predict_with_threshold(x, DEFAULT_SCORE_THRESHOLD)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(&ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        })
        .map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported model format version {} (this build reads {MODEL_FORMAT_VERSION})",
                file.format_version
            )));
        }
        Ok(file.model)
    }

    /// Saves the model as versioned JSON. All parameters are f64 and JSON
    /// numbers round-trip them exactly, so a reloaded model scores
    /// identically.
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let w = BufWriter::new(file);
        serde_json::to_writer(
            w,
            &ModelFile {
                format_version: MODEL_FORMAT_VERSION,
                model: self.clone(),
            },
        )
        .map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let r = BufReader::new(file);
        let parsed: ModelFile =
            serde_json::from_reader(r).map_err(|e| Error::Serialization(e.to_string()))?;
        if parsed.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported model format version {} (this build reads {MODEL_FORMAT_VERSION})",
                parsed.format_version
            )));
        }
        Ok(parsed.model)
    }
}

const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model: TrainedModel,
}

/// Per-feature Gini importance of a random forest; errors for any other
/// family.
pub fn gini_importances(model: &TrainedModel) -> Result<Vec<f64>> {
    match model {
        TrainedModel::RandomForest(forest) => Ok(forest.gini_importances()),
        other => Err(Error::InvalidArgument(format!(
            "Gini importances require a random forest, got {}",
            other.kind()
        ))),
    }
}
