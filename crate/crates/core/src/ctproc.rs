//! μ-CT processing: porosity binarization, down-sampling onto the coarser
//! thermal lattice, and x-y translation registration against the thermal
//! volume by mutual information.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    check_spacing, load_voxel_csv, store_voxel_csv, Dims3, LabelGrid, ThermalFeatureGrid,
    VoxelGrid3, VoxelState,
};

/// Coarse voxels whose member pore fraction strictly exceeds this are
/// labeled Defective.
pub const DEFAULT_PORE_FRACTION_THRESHOLD: f64 = 0.05;

/// Default histogram resolution for mutual-information scoring.
pub const DEFAULT_MI_BINS: usize = 32;

/// A μ-CT reconstruction: fine-grained grayscale volume, optionally with a
/// per-voxel pore segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    dims: Dims3,
    spacing_um: [f64; 3],
    grayscale: Vec<f64>,
    pore_mask: Option<Vec<bool>>,
}

impl CtVolume {
    pub fn new(
        dims: Dims3,
        spacing_um: [f64; 3],
        grayscale: Vec<f64>,
        pore_mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        check_spacing(spacing_um)?;
        if grayscale.len() != dims.n_voxels() {
            return Err(Error::InvalidArgument(format!(
                "CT volume {}x{}x{} needs {} grayscale values, got {}",
                dims.nx,
                dims.ny,
                dims.nz,
                dims.n_voxels(),
                grayscale.len()
            )));
        }
        if let Some(i) = grayscale.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite CT grayscale at voxel index {i}"
            )));
        }
        if let Some(mask) = &pore_mask {
            if mask.len() != grayscale.len() {
                return Err(Error::InvalidArgument(format!(
                    "pore mask has {} entries, expected {}",
                    mask.len(),
                    grayscale.len()
                )));
            }
        }
        Ok(Self {
            dims,
            spacing_um,
            grayscale,
            pore_mask,
        })
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn spacing_um(&self) -> [f64; 3] {
        self.spacing_um
    }

    pub fn grayscale(&self) -> &[f64] {
        &self.grayscale
    }

    pub fn pore_mask(&self) -> Option<&[bool]> {
        self.pore_mask.as_deref()
    }

    /// Reads a CT volume from the voxel CSV format, using the adapter
    /// convention: grayscale rides in the `tmax` column, the pore mask in the
    /// `mask` column, and `tau_s` is ignored.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let (grid, _) = load_voxel_csv(path)?;
        Self::new(
            grid.dims(),
            grid.spacing_um(),
            grid.tmax().values().to_vec(),
            Some(grid.mask().to_vec()),
        )
    }

    /// Writes a binarized CT volume in the voxel CSV adapter convention
    /// (see [`CtVolume::load_csv`]).
    pub fn store_csv(&self, path: &Path) -> Result<()> {
        let pore = self.pore_mask().ok_or_else(|| {
            Error::InvalidArgument("cannot store a CT volume without a pore mask".into())
        })?;
        let zeros = VoxelGrid3::constant(self.dims, self.spacing_um, 0.0)?;
        let gray = VoxelGrid3::new(self.dims, self.spacing_um, self.grayscale.clone())?;
        let adapter = ThermalFeatureGrid::new(zeros, gray, pore.to_vec())?;
        store_voxel_csv(path, &adapter, None)
    }
}

/// Which grayscale extreme marks a pore.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PorePolarity {
    /// Pores are darker than solid material (the usual CT convention).
    DarkPores,
    /// Pores are brighter than solid material.
    BrightPores,
}

/// Segments pores by grayscale thresholding: under [`PorePolarity::DarkPores`]
/// a voxel is a pore iff its grayscale is strictly below the threshold.
pub fn binarize_ct(ct: &CtVolume, gray_threshold: f64, polarity: PorePolarity) -> Result<CtVolume> {
    if !gray_threshold.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "grayscale threshold must be finite, got {gray_threshold}"
        )));
    }
    let pore_mask = ct
        .grayscale
        .iter()
        .map(|&g| match polarity {
            PorePolarity::DarkPores => g < gray_threshold,
            PorePolarity::BrightPores => g > gray_threshold,
        })
        .collect();
    CtVolume::new(ct.dims, ct.spacing_um, ct.grayscale.clone(), Some(pore_mask))
}

/// Down-sampling output: coarse grayscale and labels plus the per-coarse-voxel
/// pore bookkeeping behind each label.
#[derive(Debug, Clone)]
pub struct DownsampleResult {
    pub grayscale: VoxelGrid3,
    pub labels: LabelGrid,
    /// Member pore fraction per coarse voxel; NaN where no fine-voxel center
    /// landed in the coarse voxel.
    pub pore_fraction: Vec<f64>,
    pub member_count: Vec<usize>,
}

#[inline]
fn coarse_axis_index(i: usize, fine_spacing: f64, coarse_spacing: f64) -> usize {
    (((i as f64 + 0.5) * fine_spacing) / coarse_spacing).floor() as usize
}

/// Down-samples a binarized CT volume onto a coarser lattice.
///
/// A fine voxel belongs to the coarse voxel containing its center. Each
/// coarse voxel's grayscale is the arithmetic mean over its members; its
/// label is Defective iff the member pore fraction strictly exceeds
/// `pore_fraction_threshold` (so exactly 5% stays Normal under the default),
/// and Excluded when no member center landed inside it.
pub fn downsample_ct(
    ct: &CtVolume,
    target_spacing_um: [f64; 3],
    pore_fraction_threshold: f64,
) -> Result<DownsampleResult> {
    let pores = ct.pore_mask().ok_or_else(|| {
        Error::InvalidArgument("CT volume has no pore mask; binarize before down-sampling".into())
    })?;
    if ct.dims().n_voxels() == 0 {
        return Err(Error::InvalidArgument("empty CT volume".into()));
    }
    check_spacing(target_spacing_um)?;
    if !(0.0..1.0).contains(&pore_fraction_threshold) {
        return Err(Error::InvalidArgument(format!(
            "pore fraction threshold must be in [0, 1), got {pore_fraction_threshold}"
        )));
    }
    let fine = ct.spacing_um();
    for axis in 0..3 {
        if target_spacing_um[axis] < fine[axis] {
            return Err(Error::InvalidArgument(format!(
                "target spacing {} is finer than source spacing {} on axis {axis}",
                target_spacing_um[axis], fine[axis]
            )));
        }
    }

    let fdims = ct.dims();
    // One past the coarse index of the last fine-voxel center on each axis.
    let coarse_extent = |n: usize, axis: usize| -> usize {
        coarse_axis_index(n - 1, fine[axis], target_spacing_um[axis]) + 1
    };
    let cdims = Dims3::new(
        coarse_extent(fdims.nx, 0),
        coarse_extent(fdims.ny, 1),
        coarse_extent(fdims.nz, 2),
    )?;

    let ix: Vec<usize> = (0..fdims.nx)
        .map(|i| coarse_axis_index(i, fine[0], target_spacing_um[0]))
        .collect();
    let iy: Vec<usize> = (0..fdims.ny)
        .map(|j| coarse_axis_index(j, fine[1], target_spacing_um[1]))
        .collect();
    let iz: Vec<usize> = (0..fdims.nz)
        .map(|k| coarse_axis_index(k, fine[2], target_spacing_um[2]))
        .collect();

    let n_coarse = cdims.n_voxels();
    let mut gray_sum = vec![0.0f64; n_coarse];
    let mut members = vec![0usize; n_coarse];
    let mut pore_counts = vec![0usize; n_coarse];
    let mut fine_index = 0;
    for k in 0..fdims.nz {
        for j in 0..fdims.ny {
            for i in 0..fdims.nx {
                let ci = cdims.index_unchecked(ix[i], iy[j], iz[k]);
                gray_sum[ci] += ct.grayscale[fine_index];
                members[ci] += 1;
                pore_counts[ci] += usize::from(pores[fine_index]);
                fine_index += 1;
            }
        }
    }

    let mut gray = vec![0.0f64; n_coarse];
    let mut fractions = vec![f64::NAN; n_coarse];
    let mut states = vec![VoxelState::Excluded; n_coarse];
    for c in 0..n_coarse {
        if members[c] == 0 {
            continue;
        }
        gray[c] = gray_sum[c] / members[c] as f64;
        let fraction = pore_counts[c] as f64 / members[c] as f64;
        fractions[c] = fraction;
        states[c] = if fraction > pore_fraction_threshold {
            VoxelState::Defective
        } else {
            VoxelState::Normal
        };
    }

    Ok(DownsampleResult {
        grayscale: VoxelGrid3::new(cdims, target_spacing_um, gray)?,
        labels: LabelGrid::new(cdims, target_spacing_um, states)?,
        pore_fraction: fractions,
        member_count: members,
    })
}

#[inline]
fn histogram_bin(v: f64, min: f64, inv_range: f64, bins: usize) -> usize {
    // inv_range = bins / (max - min); the top value lands in the last bin.
    (((v - min) * inv_range) as usize).min(bins - 1)
}

/// Mutual information between two equal-length scalar fields, in nats.
///
/// Both fields are min-max normalized and binned into a `bins` × `bins`
/// joint histogram; MI = Σ p(i,j)·ln(p(i,j)/(p(i)p(j))). A constant field
/// carries no information, so the result is 0 by definition in that case.
pub fn mutual_information(a: &[f64], b: &[f64], bins: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "field lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if bins < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 histogram bins, got {bins}"
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty fields".into()));
    }
    for (name, field) in [("first", a), ("second", b)] {
        if field.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "{name} field contains non-finite values"
            )));
        }
    }

    let bounds = |field: &[f64]| {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &v in field {
            min = min.min(v);
            max = max.max(v);
        }
        (min, max)
    };
    let (a_min, a_max) = bounds(a);
    let (b_min, b_max) = bounds(b);
    if a_min == a_max || b_min == b_max {
        return Ok(0.0);
    }
    let a_inv = bins as f64 / (a_max - a_min);
    let b_inv = bins as f64 / (b_max - b_min);

    let mut joint = vec![0u64; bins * bins];
    for (&x, &y) in a.iter().zip(b) {
        let i = histogram_bin(x, a_min, a_inv, bins);
        let j = histogram_bin(y, b_min, b_inv, bins);
        joint[i * bins + j] += 1;
    }
    let mut row_sums = vec![0u64; bins];
    let mut col_sums = vec![0u64; bins];
    for i in 0..bins {
        for j in 0..bins {
            row_sums[i] += joint[i * bins + j];
            col_sums[j] += joint[i * bins + j];
        }
    }
    let n = a.len() as f64;
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j];
            if c == 0 {
                continue;
            }
            let p_ij = c as f64 / n;
            let p_i = row_sums[i] as f64 / n;
            let p_j = col_sums[j] as f64 / n;
            mi += p_ij * (p_ij / (p_i * p_j)).ln();
        }
    }
    // MI is non-negative analytically; rounding can leave a tiny negative.
    Ok(mi.max(0.0))
}

/// Integer voxel translation mapping source coordinates onto the target grid:
/// the content at source (x, y, z) appears at target (x+dx, y+dy, z+dz).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Translation3 {
    pub dx: i64,
    pub dy: i64,
    pub dz: i64,
}

impl Translation3 {
    pub fn new(dx: i64, dy: i64, dz: i64) -> Self {
        Self { dx, dy, dz }
    }

    pub fn inverse(self) -> Self {
        Self {
            dx: -self.dx,
            dy: -self.dy,
            dz: -self.dz,
        }
    }
}

/// Which thermal field the registration compares CT grayscale against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegisterAgainst {
    Tmax,
    Tau,
}

/// Outcome of [`register_xy`]: the winning translation with its score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub translation: Translation3,
    pub mi_score: f64,
    pub n_overlap: usize,
}

/// Finds the integer (dx, dy) translation aligning the coarse CT grayscale
/// with the thermal reference, given an externally supplied layer offset dz.
///
/// Every candidate in [−wx, wx] × [−wy, wy] is scored by mutual information
/// between the translated grayscale and the chosen thermal field over their
/// overlap (masked-in thermal voxels only). The argmax is deterministic
/// regardless of evaluation order: ties go to the smallest |dx|+|dy|, then to
/// the lexicographically smallest (dx, dy).
pub fn register_xy(
    gray_coarse: &VoxelGrid3,
    thermal_ref: &ThermalFeatureGrid,
    dz: i64,
    window: (usize, usize),
    against: RegisterAgainst,
    bins: usize,
) -> Result<Registration> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 histogram bins, got {bins}"
        )));
    }
    let field = match against {
        RegisterAgainst::Tmax => thermal_ref.tmax(),
        RegisterAgainst::Tau => thermal_ref.tau(),
    };
    let tdims = thermal_ref.dims();
    let sdims = gray_coarse.dims();
    let (wx, wy) = window;
    let (wx, wy) = (wx as i64, wy as i64);

    let mut candidates = Vec::with_capacity(((2 * wx + 1) * (2 * wy + 1)) as usize);
    for dx in -wx..=wx {
        for dy in -wy..=wy {
            candidates.push((dx, dy));
        }
    }

    let scored: Vec<Option<(f64, usize)>> = candidates
        .par_iter()
        .map(|&(dx, dy)| -> Result<Option<(f64, usize)>> {
            let mut ct_vals = Vec::new();
            let mut thermal_vals = Vec::new();
            for z in 0..tdims.nz {
                let sz = z as i64 - dz;
                if sz < 0 || sz >= sdims.nz as i64 {
                    continue;
                }
                for y in 0..tdims.ny {
                    let sy = y as i64 - dy;
                    if sy < 0 || sy >= sdims.ny as i64 {
                        continue;
                    }
                    for x in 0..tdims.nx {
                        let sx = x as i64 - dx;
                        if sx < 0 || sx >= sdims.nx as i64 {
                            continue;
                        }
                        if !thermal_ref.mask_at(x, y, z) {
                            continue;
                        }
                        ct_vals.push(gray_coarse.at(sx as usize, sy as usize, sz as usize));
                        thermal_vals.push(field.at(x, y, z));
                    }
                }
            }
            if ct_vals.is_empty() {
                return Ok(None);
            }
            let mi = mutual_information(&ct_vals, &thermal_vals, bins)?;
            Ok(Some((mi, ct_vals.len())))
        })
        .collect::<Result<Vec<_>>>()?;

    // Sequential reduction in candidate order keeps the result independent of
    // how the scoring work was scheduled.
    let mut best: Option<(f64, i64, i64, usize)> = None;
    for (&(dx, dy), entry) in candidates.iter().zip(&scored) {
        let &(mi, n_overlap) = match entry {
            Some(pair) => pair,
            None => continue,
        };
        let wins = match best {
            None => true,
            Some((best_mi, best_dx, best_dy, _)) => {
                let manhattan = dx.abs() + dy.abs();
                let best_manhattan = best_dx.abs() + best_dy.abs();
                mi > best_mi
                    || (mi == best_mi
                        && (manhattan < best_manhattan
                            || (manhattan == best_manhattan && (dx, dy) < (best_dx, best_dy))))
            }
        };
        if wins {
            best = Some((mi, dx, dy, n_overlap));
        }
    }

    let (mi, dx, dy, n_overlap) = best.ok_or_else(|| {
        Error::Registration(format!(
            "no candidate translation in the ±({wx}, ±{wy}) window overlaps the thermal grid at dz={dz}"
        ))
    })?;
    Ok(Registration {
        translation: Translation3::new(dx, dy, dz),
        mi_score: mi,
        n_overlap,
    })
}

/// Moves labels onto the target lattice: the target voxel (x, y, z) takes the
/// source label at (x−dx, y−dy, z−dz), and voxels whose source coordinate
/// falls outside the source grid become Excluded.
pub fn apply_translation(labels: &LabelGrid, t: Translation3, target_dims: Dims3) -> LabelGrid {
    let sdims = labels.dims();
    let mut states = vec![VoxelState::Excluded; target_dims.n_voxels()];
    let mut target_index = 0;
    for z in 0..target_dims.nz {
        let sz = z as i64 - t.dz;
        for y in 0..target_dims.ny {
            let sy = y as i64 - t.dy;
            for x in 0..target_dims.nx {
                let sx = x as i64 - t.dx;
                if sdims.contains_signed(sx, sy, sz) {
                    states[target_index] = labels.state_at(sx as usize, sy as usize, sz as usize);
                }
                target_index += 1;
            }
        }
    }
    LabelGrid::new(target_dims, labels.spacing_um(), states)
        .expect("target label grid dimensions are consistent by construction")
}
