//! Synthetic build volumes with a known, auditable porosity ground truth.
//!
//! The generator builds a cylindrical part out of smooth correlated thermal
//! fields and plants a defect rule whose strongest driver is the maximum
//! temperature of the layers *above* each voxel — the asymmetric
//! re-heating dependency that kernel features are supposed to pick up.
//! Because the rule, its coefficients, and the solved bias are all
//! recorded, a model's ranking quality can be compared against the
//! Bayes-optimal score computed from the rule itself.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Dims3, LabelGrid, ThermalFeatureGrid, VoxelGrid3, VoxelState};
use crate::models::sigmoid;
use crate::seeds;

/// Build-volume spacing used for generated grids, in micrometres.
const SPACING_UM: [f64; 3] = [100.0, 100.0, 50.0];

/// Physical scale mapping for the dimensionless latent fields.
const TAU_BASE_S: f64 = 80.0;
const TAU_SPAN_S: f64 = 15.0;
const TMAX_BASE_C: f64 = 1400.0;
const TMAX_SPAN_C: f64 = 150.0;

/// Configuration of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Number of layers.
    pub nz: usize,
    /// Cylinder diameter in voxels; the grid is diameter × diameter × nz.
    pub diameter: usize,
    /// In-plane box-smoothing radius of the latent fields.
    pub smooth_radius: usize,
    /// Amplitude of the per-layer random offset added to each field.
    /// Layers are tied together only through the defect rule, so the
    /// above-layer dependency stays clearly distinguishable from plain
    /// vertical field correlation.
    pub striping: f64,
    /// Defect-rule weight on the voxel's own standardized T_max.
    pub w_self_tmax: f64,
    /// Defect-rule weight on the mean standardized T_max of the two
    /// layers above the voxel.
    pub w_above: f64,
    /// Defect-rule weight on the voxel's own standardized τ.
    pub w_tau: f64,
    /// Target fraction of defective voxels after label noise.
    pub prevalence: f64,
    /// Label flip rate in [0, 0.5).
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            nz: 60,
            diameter: 24,
            smooth_radius: 2,
            striping: 0.6,
            w_self_tmax: 0.6,
            w_above: 2.2,
            w_tau: 0.3,
            prevalence: 0.08,
            noise: 0.02,
            seed: 0,
        }
    }
}

/// The planted defect rule with every constant resolved, plus the
/// Bayes-optimal reference AUC for the generated volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Human-readable statement of the sampling rule.
    pub rule: String,
    pub w_self_tmax: f64,
    pub w_above: f64,
    pub w_tau: f64,
    /// Intercept solved by bisection to hit the target prevalence.
    pub bias: f64,
    /// In-mask statistics behind the z-scores in the rule.
    pub tau_mean: f64,
    pub tau_std: f64,
    pub tmax_mean: f64,
    pub tmax_std: f64,
    pub noise: f64,
    pub target_prevalence: f64,
    /// Expected post-noise defect fraction implied by the solved bias.
    pub expected_prevalence: f64,
    /// AUC of the true per-voxel defect probability against the sampled
    /// labels — the ceiling no feature-based model can beat (up to
    /// sampling error).
    pub bayes_auc: f64,
    pub seed: u64,
}

fn check_config(cfg: &SynthConfig) -> Result<f64> {
    if cfg.nz == 0 || cfg.diameter < 3 {
        return Err(Error::InvalidArgument(format!(
            "volume too small: {} layers, diameter {}",
            cfg.nz, cfg.diameter
        )));
    }
    for (name, w) in [
        ("w_self_tmax", cfg.w_self_tmax),
        ("w_above", cfg.w_above),
        ("w_tau", cfg.w_tau),
        ("striping", cfg.striping),
    ] {
        if !w.is_finite() {
            return Err(Error::InvalidArgument(format!("{name} must be finite, got {w}")));
        }
    }
    if cfg.striping < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "striping amplitude must be non-negative, got {}",
            cfg.striping
        )));
    }
    if !(cfg.prevalence > 0.0 && cfg.prevalence < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target prevalence must be in (0, 1), got {}",
            cfg.prevalence
        )));
    }
    if !(0.0..0.5).contains(&cfg.noise) {
        return Err(Error::InvalidArgument(format!(
            "label noise rate must be in [0, 0.5), got {}",
            cfg.noise
        )));
    }
    // Label flips pull the defect fraction toward 0.5, so the pre-noise
    // sampling rate that lands on the target is the noise-corrected one.
    let pre = (cfg.prevalence - cfg.noise) / (1.0 - 2.0 * cfg.noise);
    if !(pre > 0.0 && pre < 1.0) {
        return Err(Error::Generation(format!(
            "target prevalence {} is unreachable under noise rate {}",
            cfg.prevalence, cfg.noise
        )));
    }
    Ok(pre)
}

fn standard_normal_field(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Two in-plane box-blur passes (x then y, repeated) with replicated
/// edges. Layers are deliberately left unsmoothed in z.
fn smooth_xy(values: &mut [f64], dims: Dims3, radius: usize) {
    if radius == 0 {
        return;
    }
    let (nx, ny, nz) = (dims.nx, dims.ny, dims.nz);
    let r = radius as i64;
    let window = (2 * radius + 1) as f64;
    let mut line = vec![0.0f64; nx.max(ny)];
    for _ in 0..2 {
        for z in 0..nz {
            let layer = &mut values[z * nx * ny..(z + 1) * nx * ny];
            for y in 0..ny {
                let row = &mut layer[y * nx..(y + 1) * nx];
                for x in 0..nx {
                    let mut sum = 0.0;
                    for dx in -r..=r {
                        let xx = (x as i64 + dx).clamp(0, nx as i64 - 1) as usize;
                        sum += row[xx];
                    }
                    line[x] = sum / window;
                }
                row.copy_from_slice(&line[..nx]);
            }
            for x in 0..nx {
                for y in 0..ny {
                    let mut sum = 0.0;
                    for dy in -r..=r {
                        let yy = (y as i64 + dy).clamp(0, ny as i64 - 1) as usize;
                        sum += layer[yy * nx + x];
                    }
                    line[y] = sum / window;
                }
                for y in 0..ny {
                    layer[y * nx + x] = line[y];
                }
            }
        }
    }
}

fn masked_mean_std(values: &[f64], mask: &[bool]) -> Result<(f64, f64)> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (v, &m) in values.iter().zip(mask) {
        if m {
            sum += v;
            count += 1;
        }
    }
    if count < 2 {
        return Err(Error::Generation("mask covers fewer than 2 voxels".into()));
    }
    let mean = sum / count as f64;
    let var = values
        .iter()
        .zip(mask)
        .filter(|&(_, &m)| m)
        .map(|(v, _)| (v - mean) * (v - mean))
        .sum::<f64>()
        / count as f64;
    if var <= 0.0 {
        return Err(Error::Generation("field is constant over the mask".into()));
    }
    Ok((mean, var.sqrt()))
}

/// Generates one synthetic volume: thermal features, defect labels, and
/// the ground-truth record of the rule that produced them. Deterministic
/// in the config.
pub fn generate(cfg: &SynthConfig) -> Result<(ThermalFeatureGrid, LabelGrid, GroundTruth)> {
    let pre_noise_target = check_config(cfg)?;
    let d = cfg.diameter;
    let dims = Dims3::new(d, d, cfg.nz)?;
    let n = dims.n_voxels();

    // Cylinder mask: a voxel is part of the build when its center lies
    // inside the circle. Identical for every layer by construction.
    let center = d as f64 / 2.0;
    let radius_sq = center * center;
    let mut layer_mask = vec![false; d * d];
    for y in 0..d {
        for x in 0..d {
            let dx = x as f64 + 0.5 - center;
            let dy = y as f64 + 0.5 - center;
            layer_mask[y * d + x] = dx * dx + dy * dy <= radius_sq;
        }
    }
    let mask: Vec<bool> = (0..n).map(|i| layer_mask[i % (d * d)]).collect();

    // Thermal fields: a shared smooth latent gives τ and T_max their
    // correlation, independent smooth noise keeps them distinct, and a
    // per-layer offset gives each layer its own character.
    let mut latent = standard_normal_field(n, seeds::derive(cfg.seed, &[0]));
    let mut tau_noise = standard_normal_field(n, seeds::derive(cfg.seed, &[1]));
    let mut tmax_noise = standard_normal_field(n, seeds::derive(cfg.seed, &[2]));
    smooth_xy(&mut latent, dims, cfg.smooth_radius);
    smooth_xy(&mut tau_noise, dims, cfg.smooth_radius);
    smooth_xy(&mut tmax_noise, dims, cfg.smooth_radius);
    let mut stripe_rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, &[3]));
    let tau_stripes: Vec<f64> = (0..cfg.nz)
        .map(|_| cfg.striping * stripe_rng.random_range(-1.0..1.0))
        .collect();
    let tmax_stripes: Vec<f64> = (0..cfg.nz)
        .map(|_| cfg.striping * stripe_rng.random_range(-1.0..1.0))
        .collect();
    let mut tau_values = vec![0.0f64; n];
    let mut tmax_values = vec![0.0f64; n];
    for i in 0..n {
        let z = i / (d * d);
        tau_values[i] = TAU_BASE_S + TAU_SPAN_S * (latent[i] + tau_noise[i] + tau_stripes[z]);
        tmax_values[i] = TMAX_BASE_C + TMAX_SPAN_C * (latent[i] + tmax_noise[i] + tmax_stripes[z]);
    }

    let (tau_mean, tau_std) = masked_mean_std(&tau_values, &mask)?;
    let (tmax_mean, tmax_std) = masked_mean_std(&tmax_values, &mask)?;

    // Weight-only part of the defect logit; the intercept is solved below.
    let layer_area = d * d;
    let core: Vec<f64> = (0..n)
        .map(|i| {
            if !mask[i] {
                return 0.0;
            }
            let z = i / layer_area;
            let z_tmax = (tmax_values[i] - tmax_mean) / tmax_std;
            let z_tau = (tau_values[i] - tau_mean) / tau_std;
            let mut above_sum = 0.0;
            let mut above_n = 0usize;
            for dz in 1..=2usize {
                if z + dz < cfg.nz {
                    let j = i + dz * layer_area;
                    above_sum += (tmax_values[j] - tmax_mean) / tmax_std;
                    above_n += 1;
                }
            }
            let above = if above_n > 0 { above_sum / above_n as f64 } else { 0.0 };
            cfg.w_self_tmax * z_tmax + cfg.w_above * above + cfg.w_tau * z_tau
        })
        .collect();

    // Solve the intercept by bisection: the in-mask mean of σ(core + b)
    // is continuous and strictly increasing in b.
    let n_masked = mask.iter().filter(|&&m| m).count();
    let mean_prob = |bias: f64| {
        core.iter()
            .zip(&mask)
            .filter(|&(_, &m)| m)
            .map(|(&c, _)| sigmoid(c + bias))
            .sum::<f64>()
            / n_masked as f64
    };
    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_prob(mid) < pre_noise_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let bias = 0.5 * (lo + hi);
    let achieved = mean_prob(bias);
    let expected_prevalence = cfg.noise + (1.0 - 2.0 * cfg.noise) * achieved;
    if (expected_prevalence - cfg.prevalence).abs() > 0.01 {
        return Err(Error::Generation(format!(
            "bias search reached expected prevalence {expected_prevalence:.4}, \
             target {} ± 0.01",
            cfg.prevalence
        )));
    }

    // Sample labels from the rule, then flip a fraction of them.
    let mut label_rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, &[4]));
    let mut flip_rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, &[5]));
    let mut states = vec![VoxelState::Excluded; n];
    let mut post_probs = Vec::with_capacity(n_masked);
    let mut labels_masked = Vec::with_capacity(n_masked);
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let p = sigmoid(core[i] + bias);
        let mut defective = label_rng.random::<f64>() < p;
        if cfg.noise > 0.0 && flip_rng.random::<f64>() < cfg.noise {
            defective = !defective;
        }
        states[i] = if defective { VoxelState::Defective } else { VoxelState::Normal };
        // Probability of the observed (post-flip) label being defective;
        // monotone in p, so ranking by it is Bayes-optimal.
        post_probs.push(cfg.noise + (1.0 - 2.0 * cfg.noise) * p);
        labels_masked.push(u8::from(defective));
    }
    let bayes_auc = crate::eval::roc_auc(&labels_masked, &post_probs)
        .map_err(|e| Error::Generation(format!("degenerate label draw: {e}")))?
        .1;

    let rule = format!(
        "P(defect) = sigmoid({:.6}*z(tmax) + {:.6}*mean_z(tmax of layers z+1,z+2) + \
         {:.6}*z(tau) + {:.6}); z(f) = (f - mean) / std over in-mask voxels \
         (tau: mean {:.6} s, std {:.6} s; tmax: mean {:.6} C, std {:.6} C); \
         sampled labels flipped independently with rate {}",
        cfg.w_self_tmax,
        cfg.w_above,
        cfg.w_tau,
        bias,
        tau_mean,
        tau_std,
        tmax_mean,
        tmax_std,
        cfg.noise
    );
    let truth = GroundTruth {
        rule,
        w_self_tmax: cfg.w_self_tmax,
        w_above: cfg.w_above,
        w_tau: cfg.w_tau,
        bias,
        tau_mean,
        tau_std,
        tmax_mean,
        tmax_std,
        noise: cfg.noise,
        target_prevalence: cfg.prevalence,
        expected_prevalence,
        bayes_auc,
        seed: cfg.seed,
    };

    let tau = VoxelGrid3::new(dims, SPACING_UM, tau_values)?;
    let tmax = VoxelGrid3::new(dims, SPACING_UM, tmax_values)?;
    let thermal = ThermalFeatureGrid::new(tau, tmax, mask)?;
    let labels = LabelGrid::new(dims, SPACING_UM, states)?;
    Ok((thermal, labels, truth))
}

/// Returns only the ground-truth record for a config: the exact planted
/// rule and the Bayes-reference AUC of the volume it generates.
pub fn describe_ground_truth(cfg: &SynthConfig) -> Result<GroundTruth> {
    generate(cfg).map(|(_, _, truth)| truth)
}
