//! Plain-text experiment configuration: one TOML file whose sections
//! cover inputs, the synthetic generator, CT ingestion, the experiment
//! grid, model hyperparameters, and the importance study. The documented
//! default template is the authoritative reference — it parses back to
//! `ExperimentConfig::default()` exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use porovox_core::ctproc::{PorePolarity, RegisterAgainst};
use porovox_core::eval::ScaleFit;
use porovox_core::models::{Hyperparams, ModelKind};
use porovox_core::resample::SmoteConfig;
use porovox_core::synth::SynthConfig;

use crate::error::CliError;

/// Documented default configuration. `--print-defaults` prints this text.
pub const DEFAULT_TEMPLATE: &str = r##"# Experiment configuration. Every key is optional; omitted keys fall back
# to the defaults shown here. Values are plain TOML.

# Master seed. Every random stage — synthesis, train/test splits,
# resampling, model training — derives its own deterministic stream from
# this single value, so one seed pins the entire run.
seed = 0

# All output files land in this directory (created when missing).
out_dir = "porovox-out"

[input]
# Voxel CSV with the thermal features; `run` and `importance` expect the
# label column to be present. When no thermal_csv is given, those
# commands generate a volume from the [synth] section instead.
#thermal_csv = "volume.csv"
# Fine CT scan CSV for `ingest` (grayscale rides in the tmax column).
#ct_csv = "ct.csv"

# Synthetic volume generator (used by `synth`, and by `run`/`importance`
# when no input CSV is configured).
[synth]
nz = 60
diameter = 24
smooth_radius = 2
striping = 0.6
w_self_tmax = 0.6
w_above = 2.2
w_tau = 0.3
prevalence = 0.08
noise = 0.02
# Ignored by the CLI: the master seed above takes its place.
seed = 0

# CT-to-thermal alignment performed by `ingest`.
[ingest]
# Externally known layer offset between the CT stack and the thermal grid.
dz = 0
# Search window half-widths: candidate shifts span [-wx, wx] x [-wy, wy].
window = [4, 4]
# Grayscale threshold for pore segmentation.
gray_threshold = 0.5
# Which grayscale extreme marks a pore: "dark_pores" or "bright_pores".
pore_polarity = "dark_pores"
# A coarse voxel is Defective when its member pore fraction strictly
# exceeds this value (exactly the threshold stays Normal).
pore_fraction_threshold = 0.05
# Thermal field the registration scores against: "tmax" or "tau".
register_against = "tmax"
# Histogram bins for the mutual-information score.
bins = 32

# The kernel x hold-out x model experiment grid run by `run`.
[experiment]
kernels = [1, 3, 5, 7]
holdouts = [0.07, 0.1, 0.2, 0.3, 0.4]
# Families: knn, dt, rf, lr, adaboost, mlp.
models = ["knn", "dt", "rf", "lr", "adaboost", "mlp"]
# Min-max scaling policy: "train" fits on training rows only, "all" on
# the full dataset before splitting.
scale_fit = "train"
# Score cutoff for hard predictions.
threshold = 0.5

# Borderline resampling of the training rows.
[smote]
# Neighbors consulted when tagging a minority row as safe/danger/noise.
m = 10
# Minority neighbors a border row may interpolate toward.
k_syn = 5
# Ignored by the CLI: resampling seeds derive from the master seed.
seed = 0

# Per-family hyperparameters.
[hp.knn]
k = 5

[hp.tree]
# Maximum split depth; omit to grow until purity.
#max_depth = 20
min_split = 2

[hp.forest]
n_trees = 100
# Candidate features per node; omit for the ceil(sqrt(d)) default.
#max_features = 16
bootstrap = true

[hp.forest.tree]
#max_depth = 20
min_split = 2

[hp.logreg]
l2 = 1e-4
max_iter = 1000
tol = 1e-6

[hp.adaboost]
n_rounds = 50

[hp.mlp]
hidden = [64, 64]
epochs = 100
batch = 256
step = 1e-3

# Repeated-split feature importance study run by `importance`.
[importance]
kernel = 5
n_splits = 100
train_fraction = 0.7
"##;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    pub thermal_csv: Option<PathBuf>,
    pub ct_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub dz: i64,
    pub window: [usize; 2],
    pub gray_threshold: f64,
    pub pore_polarity: PorePolarity,
    pub pore_fraction_threshold: f64,
    pub register_against: RegisterAgainst,
    pub bins: usize,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self {
            dz: 0,
            window: [4, 4],
            gray_threshold: 0.5,
            pore_polarity: PorePolarity::DarkPores,
            pore_fraction_threshold: 0.05,
            register_against: RegisterAgainst::Tmax,
            bins: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub kernels: Vec<usize>,
    pub holdouts: Vec<f64>,
    /// Family codes; see [`ModelKind`] for the accepted spellings.
    pub models: Vec<String>,
    pub scale_fit: ScaleFit,
    pub threshold: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            kernels: vec![1, 3, 5, 7],
            holdouts: vec![0.07, 0.10, 0.20, 0.30, 0.40],
            models: ModelKind::ALL.iter().map(|k| k.code().to_string()).collect(),
            scale_fit: ScaleFit::Train,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportanceSection {
    pub kernel: usize,
    pub n_splits: usize,
    pub train_fraction: f64,
}

impl Default for ImportanceSection {
    fn default() -> Self {
        Self {
            kernel: 5,
            n_splits: 100,
            train_fraction: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub input: InputSection,
    pub synth: SynthConfig,
    pub ingest: IngestSection,
    pub experiment: ExperimentSection,
    pub smote: SmoteConfig,
    pub hp: Hyperparams,
    pub importance: ImportanceSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("porovox-out"),
            input: InputSection::default(),
            synth: SynthConfig::default(),
            ingest: IngestSection::default(),
            experiment: ExperimentSection::default(),
            smote: SmoteConfig::default(),
            hp: Hyperparams::default(),
            importance: ImportanceSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads and validates a configuration file. Problems with the file are
    /// usage errors: the config is part of the invocation.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for &k in &self.experiment.kernels {
            if !matches!(k, 1 | 3 | 5 | 7) {
                return Err(CliError::Usage(format!(
                    "kernel size {k} is not one of 1, 3, 5, 7"
                )));
            }
        }
        for &h in &self.experiment.holdouts {
            if !(h > 0.0 && h < 1.0) {
                return Err(CliError::Usage(format!(
                    "holdout fraction {h} must lie in (0, 1)"
                )));
            }
        }
        if !self.experiment.threshold.is_finite() {
            return Err(CliError::Usage(format!(
                "score threshold {} must be finite",
                self.experiment.threshold
            )));
        }
        self.models()?;
        if !self.ingest.gray_threshold.is_finite() {
            return Err(CliError::Usage(format!(
                "grayscale threshold {} must be finite",
                self.ingest.gray_threshold
            )));
        }
        if !(0.0..1.0).contains(&self.ingest.pore_fraction_threshold) {
            return Err(CliError::Usage(format!(
                "pore fraction threshold {} must lie in [0, 1)",
                self.ingest.pore_fraction_threshold
            )));
        }
        if self.ingest.bins < 2 {
            return Err(CliError::Usage(format!(
                "registration needs at least 2 histogram bins, got {}",
                self.ingest.bins
            )));
        }
        if self.importance.n_splits == 0 {
            return Err(CliError::Usage(
                "the importance study needs at least 1 split".to_string(),
            ));
        }
        if !matches!(self.importance.kernel, 1 | 3 | 5 | 7) {
            return Err(CliError::Usage(format!(
                "importance kernel {} is not one of 1, 3, 5, 7",
                self.importance.kernel
            )));
        }
        if !(self.importance.train_fraction > 0.0 && self.importance.train_fraction < 1.0) {
            return Err(CliError::Usage(format!(
                "importance train fraction {} must lie in (0, 1)",
                self.importance.train_fraction
            )));
        }
        Ok(())
    }

    /// Parses the configured model codes.
    pub fn models(&self) -> Result<Vec<ModelKind>, CliError> {
        self.experiment
            .models
            .iter()
            .map(|name| {
                name.parse::<ModelKind>()
                    .map_err(|e| CliError::Usage(e.to_string()))
            })
            .collect()
    }
}
