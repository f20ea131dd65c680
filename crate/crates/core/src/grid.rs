//! Voxel-grid data model: dense 3D scalar fields, thermal feature volumes,
//! per-voxel labels, and the voxel CSV interchange format.
//!
//! Storage is row-major with x fastest, then y, then z, so a build layer
//! (fixed z) is one contiguous slice of the flat value array.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel counts along x, y, z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims3 {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims3 {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        nx.checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or_else(|| {
                Error::InvalidArgument(format!("voxel count {nx}x{ny}x{nz} overflows usize"))
            })?;
        Ok(Self { nx, ny, nz })
    }

    pub fn n_voxels(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Flat index of (x, y, z): `x + nx·(y + ny·z)`.
    pub fn linear_index(&self, x: usize, y: usize, z: usize) -> Result<usize> {
        if x >= self.nx || y >= self.ny || z >= self.nz {
            return Err(Error::OutOfRange(format!(
                "voxel ({x}, {y}, {z}) outside grid {}x{}x{}",
                self.nx, self.ny, self.nz
            )));
        }
        Ok(self.index_unchecked(x, y, z))
    }

    #[inline]
    pub(crate) fn index_unchecked(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny && z < self.nz);
        x + self.nx * (y + self.ny * z)
    }

    /// Inverse of `linear_index`.
    pub fn coords_of(&self, index: usize) -> Result<(usize, usize, usize)> {
        if index >= self.n_voxels() {
            return Err(Error::OutOfRange(format!(
                "flat index {index} outside grid of {} voxels",
                self.n_voxels()
            )));
        }
        let x = index % self.nx;
        let y = (index / self.nx) % self.ny;
        let z = index / (self.nx * self.ny);
        Ok((x, y, z))
    }

    /// Whether signed coordinates land inside the grid. Useful when walking
    /// kernel offsets or translations that may step off an edge.
    #[inline]
    pub fn contains_signed(&self, x: i64, y: i64, z: i64) -> bool {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < self.nx
            && (y as usize) < self.ny
            && (z as usize) < self.nz
    }
}

pub(crate) fn check_spacing(spacing_um: [f64; 3]) -> Result<()> {
    if spacing_um.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "voxel spacing must be finite and positive, got {spacing_um:?}"
        )));
    }
    Ok(())
}

/// Dense 3D scalar field with physical voxel spacing (μm).
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid3 {
    dims: Dims3,
    spacing_um: [f64; 3],
    values: Vec<f64>,
}

impl VoxelGrid3 {
    pub fn new(dims: Dims3, spacing_um: [f64; 3], values: Vec<f64>) -> Result<Self> {
        check_spacing(spacing_um)?;
        if values.len() != dims.n_voxels() {
            return Err(Error::InvalidArgument(format!(
                "grid {}x{}x{} needs {} values, got {}",
                dims.nx,
                dims.ny,
                dims.nz,
                dims.n_voxels(),
                values.len()
            )));
        }
        Ok(Self {
            dims,
            spacing_um,
            values,
        })
    }

    pub fn constant(dims: Dims3, spacing_um: [f64; 3], value: f64) -> Result<Self> {
        Self::new(dims, spacing_um, vec![value; dims.n_voxels()])
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn spacing_um(&self) -> [f64; 3] {
        self.spacing_um
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at (x, y, z); panics in debug builds when out of range.
    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.dims.index_unchecked(x, y, z)]
    }

    pub fn value(&self, x: usize, y: usize, z: usize) -> Result<f64> {
        Ok(self.values[self.dims.linear_index(x, y, z)?])
    }

    /// Contiguous view of layer z: nx·ny values, x fastest then y.
    pub fn layer_slice(&self, z: usize) -> Result<&[f64]> {
        if z >= self.dims.nz {
            return Err(Error::OutOfRange(format!(
                "layer {z} outside grid with {} layers",
                self.dims.nz
            )));
        }
        let per_layer = self.dims.nx * self.dims.ny;
        Ok(&self.values[z * per_layer..(z + 1) * per_layer])
    }
}

/// Per-voxel ground-truth state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum VoxelState {
    Normal = 0,
    Defective = 1,
    Excluded = 2,
}

impl VoxelState {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(VoxelState::Normal),
            1 => Some(VoxelState::Defective),
            2 => Some(VoxelState::Excluded),
            _ => None,
        }
    }
}

/// Per-voxel labels on the same lattice as a thermal grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    dims: Dims3,
    spacing_um: [f64; 3],
    states: Vec<VoxelState>,
}

impl LabelGrid {
    pub fn new(dims: Dims3, spacing_um: [f64; 3], states: Vec<VoxelState>) -> Result<Self> {
        check_spacing(spacing_um)?;
        if states.len() != dims.n_voxels() {
            return Err(Error::InvalidArgument(format!(
                "label grid {}x{}x{} needs {} states, got {}",
                dims.nx,
                dims.ny,
                dims.nz,
                dims.n_voxels(),
                states.len()
            )));
        }
        Ok(Self {
            dims,
            spacing_um,
            states,
        })
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn spacing_um(&self) -> [f64; 3] {
        self.spacing_um
    }

    pub fn states(&self) -> &[VoxelState] {
        &self.states
    }

    #[inline]
    pub fn state_at(&self, x: usize, y: usize, z: usize) -> VoxelState {
        self.states[self.dims.index_unchecked(x, y, z)]
    }

    /// (normal, defective, excluded) counts.
    pub fn state_counts(&self) -> (usize, usize, usize) {
        let mut counts = [0usize; 3];
        for s in &self.states {
            counts[s.code() as usize] += 1;
        }
        (counts[0], counts[1], counts[2])
    }
}

/// Paired per-voxel thermal features: time above the melting threshold (τ,
/// seconds) and maximum radiance (T_max, camera units), plus the part mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalFeatureGrid {
    tau: VoxelGrid3,
    tmax: VoxelGrid3,
    mask: Vec<bool>,
}

impl ThermalFeatureGrid {
    /// Validates that both fields share one lattice and that values inside
    /// the mask are finite with τ ≥ 0. Outside the mask anything goes — those
    /// voxels never reach a model.
    pub fn new(tau: VoxelGrid3, tmax: VoxelGrid3, mask: Vec<bool>) -> Result<Self> {
        if tau.dims() != tmax.dims() || tau.spacing_um() != tmax.spacing_um() {
            return Err(Error::InvalidArgument(
                "tau and tmax grids must share dims and spacing".into(),
            ));
        }
        if mask.len() != tau.dims().n_voxels() {
            return Err(Error::InvalidArgument(format!(
                "mask has {} entries, expected {}",
                mask.len(),
                tau.dims().n_voxels()
            )));
        }
        for (i, &inside) in mask.iter().enumerate() {
            if !inside {
                continue;
            }
            let t = tau.values()[i];
            let m = tmax.values()[i];
            if !t.is_finite() || !m.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite thermal value at masked-in voxel index {i}"
                )));
            }
            if t < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "negative tau {t} at masked-in voxel index {i}"
                )));
            }
        }
        Ok(Self { tau, tmax, mask })
    }

    pub fn dims(&self) -> Dims3 {
        self.tau.dims()
    }

    pub fn spacing_um(&self) -> [f64; 3] {
        self.tau.spacing_um()
    }

    pub fn tau(&self) -> &VoxelGrid3 {
        &self.tau
    }

    pub fn tmax(&self) -> &VoxelGrid3 {
        &self.tmax
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn mask_at(&self, x: usize, y: usize, z: usize) -> bool {
        self.mask[self.dims().index_unchecked(x, y, z)]
    }

    pub fn n_masked(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

const CSV_HEADER_LABELED: &str = "x,y,z,tau_s,tmax,mask,label";
const CSV_HEADER_UNLABELED: &str = "x,y,z,tau_s,tmax,mask";

/// Writes a thermal grid (and optional labels) as voxel CSV:
///
/// ```text
/// # dims <nx> <ny> <nz>
/// # spacing_um <sx> <sy> <sz>
/// x,y,z,tau_s,tmax,mask,label
/// 0,0,0,0.125,913.5,1,0
/// ...
/// ```
///
/// One record per voxel in flat-index order. Floats use the shortest
/// representation that parses back to the identical bits, so store → load is
/// exact.
pub fn store_voxel_csv(
    path: &Path,
    thermal: &ThermalFeatureGrid,
    labels: Option<&LabelGrid>,
) -> Result<()> {
    if let Some(lab) = labels {
        if lab.dims() != thermal.dims() {
            return Err(Error::InvalidArgument(
                "label grid dims do not match thermal grid".into(),
            ));
        }
    }
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let dims = thermal.dims();
    let [sx, sy, sz] = thermal.spacing_um();
    writeln!(w, "# dims {} {} {}", dims.nx, dims.ny, dims.nz)?;
    writeln!(w, "# spacing_um {sx} {sy} {sz}")?;
    writeln!(
        w,
        "{}",
        if labels.is_some() {
            CSV_HEADER_LABELED
        } else {
            CSV_HEADER_UNLABELED
        }
    )?;
    let mut line = String::new();
    for i in 0..dims.n_voxels() {
        let (x, y, z) = dims.coords_of(i)?;
        let tau = thermal.tau().values()[i];
        let tmax = thermal.tmax().values()[i];
        let mask = u8::from(thermal.mask()[i]);
        line.clear();
        write!(line, "{x},{y},{z},{tau},{tmax},{mask}").expect("write to String");
        if let Some(lab) = labels {
            write!(line, ",{}", lab.states()[i].code()).expect("write to String");
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.trim()
        .parse::<T>()
        .map_err(|_| parse_err(line, format!("cannot parse {what} from {s:?}")))
}

/// Reads a voxel CSV written by [`store_voxel_csv`]. Returns the thermal grid
/// and, when the label column is present, the label grid.
///
/// Every structural problem — bad header, wrong record count, out-of-order
/// coordinates, mask or label outside its domain, non-finite thermal values
/// inside the mask — is a parse error carrying the 1-based line number.
pub fn load_voxel_csv(path: &Path) -> Result<(ThermalFeatureGrid, Option<LabelGrid>)> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let mut next_line = |expect: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((idx, Ok(text))) => Ok((idx + 1, text)),
            Some((idx, Err(e))) => Err(parse_err(idx + 1, e.to_string())),
            None => Err(parse_err(0, format!("file ended before {expect}"))),
        }
    };

    // Line 1: `# dims <nx> <ny> <nz>`
    let (lno, text) = next_line("dims line")?;
    let rest = text
        .strip_prefix("# dims ")
        .ok_or_else(|| parse_err(lno, "expected `# dims <nx> <ny> <nz>`"))?;
    let parts: Vec<&str> = rest.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(parse_err(lno, "dims line needs exactly three counts"));
    }
    let dims = Dims3::new(
        parse_field(parts[0], lno, "nx")?,
        parse_field(parts[1], lno, "ny")?,
        parse_field(parts[2], lno, "nz")?,
    )?;

    // Line 2: `# spacing_um <sx> <sy> <sz>`
    let (lno, text) = next_line("spacing line")?;
    let rest = text
        .strip_prefix("# spacing_um ")
        .ok_or_else(|| parse_err(lno, "expected `# spacing_um <sx> <sy> <sz>`"))?;
    let parts: Vec<&str> = rest.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(parse_err(lno, "spacing line needs exactly three values"));
    }
    let spacing_um = [
        parse_field(parts[0], lno, "sx")?,
        parse_field(parts[1], lno, "sy")?,
        parse_field(parts[2], lno, "sz")?,
    ];
    check_spacing(spacing_um).map_err(|e| parse_err(lno, e.to_string()))?;

    // Line 3: column header, with or without the label column.
    let (lno, text) = next_line("column header")?;
    let has_labels = match text.trim() {
        CSV_HEADER_LABELED => true,
        CSV_HEADER_UNLABELED => false,
        other => {
            return Err(parse_err(
                lno,
                format!("unrecognized header {other:?}, expected `{CSV_HEADER_LABELED}`"),
            ))
        }
    };
    let n_fields = if has_labels { 7 } else { 6 };

    let n = dims.n_voxels();
    let mut tau = vec![0.0f64; n];
    let mut tmax = vec![0.0f64; n];
    let mut mask = vec![false; n];
    let mut states = if has_labels {
        vec![VoxelState::Excluded; n]
    } else {
        Vec::new()
    };

    for i in 0..n {
        let (lno, text) = match lines.next() {
            Some((idx, Ok(text))) => (idx + 1, text),
            Some((idx, Err(e))) => return Err(parse_err(idx + 1, e.to_string())),
            None => {
                return Err(parse_err(
                    3 + i,
                    format!("expected {n} voxel records, file ends after {i}"),
                ))
            }
        };
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() != n_fields {
            return Err(parse_err(
                lno,
                format!("expected {n_fields} fields, got {}", fields.len()),
            ));
        }
        let x: usize = parse_field(fields[0], lno, "x")?;
        let y: usize = parse_field(fields[1], lno, "y")?;
        let z: usize = parse_field(fields[2], lno, "z")?;
        let expected = dims.coords_of(i)?;
        if (x, y, z) != expected {
            return Err(parse_err(
                lno,
                format!("record {i} has coordinates ({x}, {y}, {z}), expected {expected:?}"),
            ));
        }
        tau[i] = parse_field(fields[3], lno, "tau_s")?;
        tmax[i] = parse_field(fields[4], lno, "tmax")?;
        mask[i] = match fields[5].trim() {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(lno, format!("mask must be 0 or 1, got {other:?}"))),
        };
        if mask[i] {
            if !tau[i].is_finite() || !tmax[i].is_finite() {
                return Err(parse_err(lno, "non-finite thermal value inside the mask"));
            }
            if tau[i] < 0.0 {
                return Err(parse_err(lno, format!("negative tau {} inside the mask", tau[i])));
            }
        }
        if has_labels {
            let code: u8 = parse_field(fields[6], lno, "label")?;
            states[i] = VoxelState::from_code(code)
                .ok_or_else(|| parse_err(lno, format!("label must be 0, 1 or 2, got {code}")))?;
        }
    }

    if let Some((idx, line)) = lines.next() {
        let trailing = match line {
            Ok(text) => !text.trim().is_empty(),
            Err(_) => true,
        };
        if trailing {
            return Err(parse_err(
                idx + 1,
                format!("more than {n} voxel records in a {}x{}x{} grid", dims.nx, dims.ny, dims.nz),
            ));
        }
    }

    let thermal = ThermalFeatureGrid::new(
        VoxelGrid3::new(dims, spacing_um, tau)?,
        VoxelGrid3::new(dims, spacing_um, tmax)?,
        mask,
    )?;
    let labels = if has_labels {
        Some(LabelGrid::new(dims, spacing_um, states)?)
    } else {
        None
    };
    Ok((thermal, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn dims(nx: usize, ny: usize, nz: usize) -> Dims3 {
        Dims3::new(nx, ny, nz).unwrap()
    }

    #[test]
    fn linear_index_origin_is_zero() {
        assert_eq!(dims(4, 4, 4).linear_index(0, 0, 0).unwrap(), 0);
        assert_eq!(dims(9, 2, 7).linear_index(0, 0, 0).unwrap(), 0);
    }

    #[test]
    fn linear_index_x_is_fastest() {
        assert_eq!(dims(4, 4, 4).linear_index(1, 0, 0).unwrap(), 1);
    }

    #[test]
    fn linear_index_hand_expansion() {
        // 2 + 4·(3 + 5·1) = 34
        assert_eq!(dims(4, 5, 6).linear_index(2, 3, 1).unwrap(), 34);
    }

    #[test]
    fn linear_index_rejects_out_of_bounds() {
        let d = dims(4, 5, 6);
        assert!(d.linear_index(4, 0, 0).is_err());
        assert!(d.linear_index(0, 5, 0).is_err());
        assert!(d.linear_index(0, 0, 6).is_err());
    }

    #[test]
    fn coords_of_inverts_linear_index_exhaustively() {
        for d in [dims(8, 8, 8), dims(5, 7, 3), dims(1, 1, 1), dims(2, 1, 6)] {
            for z in 0..d.nz {
                for y in 0..d.ny {
                    for x in 0..d.nx {
                        let i = d.linear_index(x, y, z).unwrap();
                        assert_eq!(d.coords_of(i).unwrap(), (x, y, z));
                    }
                }
            }
            assert!(d.coords_of(d.n_voxels()).is_err());
        }
    }

    fn random_grid(d: Dims3, spacing: [f64; 3], rng: &mut ChaCha8Rng) -> VoxelGrid3 {
        let values = (0..d.n_voxels()).map(|_| rng.random::<f64>() * 100.0).collect();
        VoxelGrid3::new(d, spacing, values).unwrap()
    }

    #[test]
    fn layer_slice_constant_grid() {
        let g = VoxelGrid3::constant(dims(3, 4, 5), [1.0, 1.0, 1.0], 7.5).unwrap();
        assert!(g.layer_slice(2).unwrap().iter().all(|&v| v == 7.5));
    }

    #[test]
    fn layer_slice_of_z_valued_grid() {
        let d = dims(3, 3, 4);
        let mut values = vec![0.0; d.n_voxels()];
        for z in 0..d.nz {
            for y in 0..d.ny {
                for x in 0..d.nx {
                    values[d.linear_index(x, y, z).unwrap()] = z as f64;
                }
            }
        }
        let g = VoxelGrid3::new(d, [1.0, 1.0, 1.0], values).unwrap();
        for z in 0..d.nz {
            assert!(g.layer_slice(z).unwrap().iter().all(|&v| v == z as f64));
        }
    }

    #[test]
    fn layer_slice_matches_per_voxel_gather() {
        let d = dims(4, 5, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_grid(d, [1.0, 1.0, 1.0], &mut rng);
        let z = 3;
        let mut expected = Vec::new();
        for y in 0..d.ny {
            for x in 0..d.nx {
                expected.push(g.at(x, y, z));
            }
        }
        assert_eq!(g.layer_slice(z).unwrap(), expected.as_slice());
    }

    #[test]
    fn layer_slices_concatenate_to_flat_array() {
        let d = dims(3, 2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = random_grid(d, [1.0, 1.0, 1.0], &mut rng);
        let mut concat = Vec::new();
        for z in 0..d.nz {
            concat.extend_from_slice(g.layer_slice(z).unwrap());
        }
        assert_eq!(concat.as_slice(), g.values());
        assert!(g.layer_slice(d.nz).is_err());
    }

    #[test]
    fn grid_construction_validates_lengths_and_spacing() {
        let d = dims(2, 2, 2);
        assert!(VoxelGrid3::new(d, [1.0, 1.0, 1.0], vec![0.0; 7]).is_err());
        assert!(VoxelGrid3::new(d, [1.0, 0.0, 1.0], vec![0.0; 8]).is_err());
        assert!(VoxelGrid3::new(d, [1.0, -2.0, 1.0], vec![0.0; 8]).is_err());
    }

    #[test]
    fn thermal_grid_rejects_bad_masked_values() {
        let d = dims(2, 1, 1);
        let spacing = [130.0, 135.0, 50.0];
        let tmax = VoxelGrid3::constant(d, spacing, 1.0).unwrap();
        let all_in = vec![true, true];

        let neg_tau = VoxelGrid3::new(d, spacing, vec![-0.5, 0.5]).unwrap();
        assert!(ThermalFeatureGrid::new(neg_tau, tmax.clone(), all_in.clone()).is_err());

        let nan_tau = VoxelGrid3::new(d, spacing, vec![f64::NAN, 0.5]).unwrap();
        assert!(ThermalFeatureGrid::new(nan_tau.clone(), tmax.clone(), all_in).is_err());

        // The same grids are fine when the offending voxel is outside the mask.
        assert!(ThermalFeatureGrid::new(nan_tau, tmax, vec![false, true]).is_ok());
    }

    fn random_dataset(seed: u64) -> (ThermalFeatureGrid, LabelGrid) {
        let d = dims(6, 6, 4);
        let spacing = [130.0, 135.0, 50.0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = d.n_voxels();
        let mask: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.8).collect();
        let tau: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 0.01).collect();
        let tmax: Vec<f64> = (0..n).map(|_| 800.0 + rng.random::<f64>() * 400.0).collect();
        let states: Vec<VoxelState> = mask
            .iter()
            .map(|&inside| {
                if !inside {
                    VoxelState::Excluded
                } else if rng.random::<f64>() < 0.1 {
                    VoxelState::Defective
                } else {
                    VoxelState::Normal
                }
            })
            .collect();
        let thermal = ThermalFeatureGrid::new(
            VoxelGrid3::new(d, spacing, tau).unwrap(),
            VoxelGrid3::new(d, spacing, tmax).unwrap(),
            mask,
        )
        .unwrap();
        let labels = LabelGrid::new(d, spacing, states).unwrap();
        (thermal, labels)
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let (thermal, labels) = random_dataset(42);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("voxels.csv");
        store_voxel_csv(&path, &thermal, Some(&labels)).unwrap();
        let (thermal2, labels2) = load_voxel_csv(&path).unwrap();
        assert_eq!(thermal, thermal2);
        assert_eq!(Some(labels), labels2);
    }

    #[test]
    fn csv_round_trip_without_labels() {
        let (thermal, _) = random_dataset(43);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("voxels.csv");
        store_voxel_csv(&path, &thermal, None).unwrap();
        let (thermal2, labels2) = load_voxel_csv(&path).unwrap();
        assert_eq!(thermal, thermal2);
        assert!(labels2.is_none());
    }

    fn stored_lines(seed: u64) -> (tempfile::TempDir, Vec<String>) {
        let (thermal, labels) = random_dataset(seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("voxels.csv");
        store_voxel_csv(&path, &thermal, Some(&labels)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        (dir, text.lines().map(String::from).collect())
    }

    fn write_lines(dir: &tempfile::TempDir, lines: &[String]) -> std::path::PathBuf {
        let path = dir.path().join("edited.csv");
        std::fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    #[test]
    fn missing_record_is_a_parse_error() {
        let (dir, mut lines) = stored_lines(1);
        lines.pop();
        let path = write_lines(&dir, &lines);
        match load_voxel_csv(&path) {
            Err(Error::Parse { message, .. }) => assert!(message.contains("records")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn extra_record_is_a_parse_error() {
        let (dir, mut lines) = stored_lines(2);
        lines.push(lines.last().unwrap().clone());
        let path = write_lines(&dir, &lines);
        assert!(matches!(load_voxel_csv(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn bad_label_names_its_line() {
        let (dir, mut lines) = stored_lines(3);
        // Record for flat index 5 lives on line 9 (two comment lines + header).
        let edited = 8;
        let mut fields: Vec<String> = lines[edited].split(',').map(String::from).collect();
        fields[6] = "7".into();
        lines[edited] = fields.join(",");
        let path = write_lines(&dir, &lines);
        match load_voxel_csv(&path) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, edited + 1);
                assert!(message.contains("label"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_mask_value_rejected() {
        let (dir, mut lines) = stored_lines(4);
        let mut fields: Vec<String> = lines[3].split(',').map(String::from).collect();
        fields[5] = "2".into();
        lines[3] = fields.join(",");
        let path = write_lines(&dir, &lines);
        assert!(matches!(load_voxel_csv(&path), Err(Error::Parse { line: 4, .. })));
    }

    #[test]
    fn non_finite_tau_inside_mask_rejected() {
        let (dir, mut lines) = stored_lines(5);
        // Force record 0 to be masked-in with NaN tau.
        let mut fields: Vec<String> = lines[3].split(',').map(String::from).collect();
        fields[3] = "NaN".into();
        fields[5] = "1".into();
        lines[3] = fields.join(",");
        let path = write_lines(&dir, &lines);
        match load_voxel_csv(&path) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("non-finite"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_headers_rejected() {
        let (dir, lines) = stored_lines(6);

        let mut bad_dims = lines.clone();
        bad_dims[0] = "# dims 6 6".into();
        assert!(matches!(
            load_voxel_csv(&write_lines(&dir, &bad_dims)),
            Err(Error::Parse { line: 1, .. })
        ));

        let mut bad_spacing = lines.clone();
        bad_spacing[1] = "# spacing 130 135 50".into();
        assert!(matches!(
            load_voxel_csv(&write_lines(&dir, &bad_spacing)),
            Err(Error::Parse { line: 2, .. })
        ));

        let mut bad_header = lines.clone();
        bad_header[2] = "x,y,z,tau,tmax,mask,label".into();
        assert!(matches!(
            load_voxel_csv(&write_lines(&dir, &bad_header)),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn out_of_order_coordinates_rejected() {
        let (dir, mut lines) = stored_lines(7);
        lines.swap(3, 4);
        let path = write_lines(&dir, &lines);
        assert!(matches!(load_voxel_csv(&path), Err(Error::Parse { line: 4, .. })));
    }

    #[test]
    fn voxel_state_codes_round_trip() {
        for s in [VoxelState::Normal, VoxelState::Defective, VoxelState::Excluded] {
            assert_eq!(VoxelState::from_code(s.code()), Some(s));
        }
        assert_eq!(VoxelState::from_code(3), None);
    }
}
