//! Voxel-wise porosity prediction for laser powder bed fusion builds.
//!
//! The library turns registered μ-CT ground truth and per-voxel thermal
//! features (τ, the time above the apparent melting threshold, and T_max,
//! the maximum radiance) into labeled datasets, extracts neighborhood kernel
//! features, rebalances training data with Borderline-SMOTE, trains six
//! classifier families implemented from first principles, and evaluates them
//! with imbalance-aware metrics and Gini feature-importance studies. A
//! synthetic dataset generator with a known ground-truth rule stands in for
//! proprietary build data.

pub mod ctproc;
pub mod error;
pub mod eval;
pub mod features;
pub mod grid;
pub mod matrix;
pub mod models;
pub mod resample;
pub mod seeds;
pub mod synth;

pub use error::{Error, Result};
pub use matrix::Matrix;
