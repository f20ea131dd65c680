//! Kernel-window feature extraction, min-max scaling, and train/test splits.
//!
//! Each voxel that has a complete, fully masked k×k×k neighborhood and a
//! definite label becomes one feature row of length 2k³: the τ values of the
//! neighborhood followed by its T_max values, neighbors enumerated with dz
//! slowest and dx fastest.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{LabelGrid, ThermalFeatureGrid, VoxelState};
use crate::matrix::Matrix;

/// Feature rows plus the voxel coordinate each row came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    kernel_k: usize,
    data: Matrix,
    row_coords: Vec<(usize, usize, usize)>,
}

impl FeatureMatrix {
    pub fn kernel_k(&self) -> usize {
        self.kernel_k
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn row_coords(&self) -> &[(usize, usize, usize)] {
        &self.row_coords
    }

    pub fn n_rows(&self) -> usize {
        self.data.n_rows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.n_cols()
    }
}

fn check_kernel_k(k: usize) -> Result<usize> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "kernel size must be odd and at least 1, got {k}"
        )));
    }
    Ok((k - 1) / 2)
}

/// Extracts kernel features for every voxel whose k×k×k neighborhood lies
/// fully in-grid and in-mask and whose own label is Normal or Defective.
///
/// Returns the feature matrix and the matching 0/1 label vector, rows in
/// flat-index order of the central voxel.
pub fn extract_kernel(
    thermal: &ThermalFeatureGrid,
    labels: &LabelGrid,
    k: usize,
) -> Result<(FeatureMatrix, Vec<u8>)> {
    let half = check_kernel_k(k)?;
    let dims = thermal.dims();
    if labels.dims() != dims {
        return Err(Error::InvalidArgument(
            "label grid dims do not match thermal grid".into(),
        ));
    }

    // Select central voxels serially so row order is the voxel order, then
    // fill the (independent) rows in parallel.
    let mut centers: Vec<(usize, usize, usize)> = Vec::new();
    let mut y_out: Vec<u8> = Vec::new();
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let state = labels.state_at(x, y, z);
                let class = match state {
                    VoxelState::Normal => 0u8,
                    VoxelState::Defective => 1u8,
                    VoxelState::Excluded => continue,
                };
                if x < half || y < half || z < half {
                    continue;
                }
                if x + half >= dims.nx || y + half >= dims.ny || z + half >= dims.nz {
                    continue;
                }
                let mut all_masked = true;
                'neighborhood: for dz in 0..k {
                    for dy in 0..k {
                        for dx in 0..k {
                            if !thermal.mask_at(x + dx - half, y + dy - half, z + dz - half) {
                                all_masked = false;
                                break 'neighborhood;
                            }
                        }
                    }
                }
                if !all_masked {
                    continue;
                }
                centers.push((x, y, z));
                y_out.push(class);
            }
        }
    }

    let width = 2 * k * k * k;
    let rows: Vec<Vec<f64>> = centers
        .par_iter()
        .map(|&(x, y, z)| {
            let mut row = Vec::with_capacity(width);
            for field in [thermal.tau(), thermal.tmax()] {
                for dz in 0..k {
                    for dy in 0..k {
                        for dx in 0..k {
                            row.push(field.at(x + dx - half, y + dy - half, z + dz - half));
                        }
                    }
                }
            }
            row
        })
        .collect();

    let mut data = Matrix::with_cols(width);
    for row in &rows {
        data.push_row(row);
    }
    Ok((
        FeatureMatrix {
            kernel_k: k,
            data,
            row_coords: centers,
        },
        y_out,
    ))
}

/// Which thermal field a feature column reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Tau,
    Tmax,
}

/// Maps a feature column index back to its field and neighborhood offset
/// (dx, dy, dz), the inverse of the `extract_kernel` layout. The offset's dz
/// names the layer: +dz is above the central voxel.
pub fn feature_index_meta(i: usize, k: usize) -> Result<(FeatureKind, (i64, i64, i64))> {
    let half = check_kernel_k(k)? as i64;
    let cube = k * k * k;
    if i >= 2 * cube {
        return Err(Error::OutOfRange(format!(
            "feature index {i} outside 0..{} for kernel {k}",
            2 * cube
        )));
    }
    let kind = if i < cube { FeatureKind::Tau } else { FeatureKind::Tmax };
    let j = i % cube;
    let dz = (j / (k * k)) as i64 - half;
    let dy = ((j / k) % k) as i64 - half;
    let dx = (j % k) as i64 - half;
    Ok((kind, (dx, dy, dz)))
}

/// Per-column min and max over the rows used for fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
}

/// Records each column's min and max over the given rows (training rows, in
/// the standard pipeline, so nothing about the test set leaks into scaling).
pub fn fit_minmax(x: &Matrix) -> Result<ScaleParams> {
    if x.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot fit scaling parameters on an empty matrix".into(),
        ));
    }
    let mut x_min = vec![f64::INFINITY; x.n_cols()];
    let mut x_max = vec![f64::NEG_INFINITY; x.n_cols()];
    for row in x.rows() {
        for (j, &v) in row.iter().enumerate() {
            x_min[j] = x_min[j].min(v);
            x_max[j] = x_max[j].max(v);
        }
    }
    Ok(ScaleParams { x_min, x_max })
}

/// Applies x′ = (x − x_min)/(x_max − x_min) per column. Degenerate columns
/// (x_max == x_min) map to 0. Values beyond the fitted range — possible on
/// test rows — extrapolate without clipping.
pub fn apply_minmax(x: &Matrix, params: &ScaleParams) -> Result<Matrix> {
    if x.n_cols() != params.x_min.len() {
        return Err(Error::InvalidArgument(format!(
            "matrix has {} columns but scaling parameters cover {}",
            x.n_cols(),
            params.x_min.len()
        )));
    }
    let inv_range: Vec<f64> = params
        .x_min
        .iter()
        .zip(&params.x_max)
        .map(|(&lo, &hi)| if hi > lo { 1.0 / (hi - lo) } else { 0.0 })
        .collect();
    let mut out = Matrix::with_cols(x.n_cols());
    let mut scaled = vec![0.0; x.n_cols()];
    for row in x.rows() {
        for (j, &v) in row.iter().enumerate() {
            scaled[j] = (v - params.x_min[j]) * inv_range[j];
        }
        out.push_row(&scaled);
    }
    Ok(out)
}

/// A reproducible uniform train/test partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

/// Partitions row indices 0..n_rows into train and test sets, with
/// |test| = round(n·test_fraction). The shuffle is an explicit Fisher–Yates
/// over a seeded ChaCha stream, so the same spec always yields the same
/// partition on any platform. Both index lists come back sorted.
pub fn split(n_rows: usize, spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_rows < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 rows to split, got {n_rows}"
        )));
    }
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must be in (0, 1), got {}",
            spec.test_fraction
        )));
    }
    let n_test = (n_rows as f64 * spec.test_fraction).round() as usize;
    if n_test == 0 || n_test == n_rows {
        return Err(Error::InvalidArgument(format!(
            "test fraction {} leaves an empty side on {n_rows} rows",
            spec.test_fraction
        )));
    }
    let mut indices: Vec<usize> = (0..n_rows).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Partial Fisher–Yates: after i steps the prefix is a uniform sample.
    for i in 0..n_test {
        let j = rng.random_range(i..n_rows);
        indices.swap(i, j);
    }
    let mut test: Vec<usize> = indices[..n_test].to_vec();
    let mut train: Vec<usize> = indices[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Writes a feature matrix with labels as CSV: a `# kernel <k>` comment, a
/// `x,y,z,label,f0..f{2k³−1}` header, then one row per feature vector.
pub fn store_feature_csv(path: &Path, features: &FeatureMatrix, y: &[u8]) -> Result<()> {
    if y.len() != features.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} feature rows",
            y.len(),
            features.n_rows()
        )));
    }
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# kernel {}", features.kernel_k)?;
    let mut header = String::from("x,y,z,label");
    for j in 0..features.n_cols() {
        write!(header, ",f{j}").expect("write to String");
    }
    writeln!(w, "{header}")?;
    let mut line = String::new();
    for (i, row) in features.data.rows().enumerate() {
        let (x, y_coord, z) = features.row_coords[i];
        line.clear();
        write!(line, "{x},{y_coord},{z},{}", y[i]).expect("write to String");
        for &v in row {
            write!(line, ",{v}").expect("write to String");
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a feature CSV written by [`store_feature_csv`].
pub fn load_feature_csv(path: &Path) -> Result<(FeatureMatrix, Vec<u8>)> {
    let parse_err = |line: usize, message: String| Error::Parse { line, message };
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, first) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty feature file".into()))?;
    let first = first.map_err(|e| parse_err(1, e.to_string()))?;
    let k: usize = first
        .strip_prefix("# kernel ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_err(1, "expected `# kernel <k>`".into()))?;
    check_kernel_k(k).map_err(|e| parse_err(1, e.to_string()))?;
    let width = 2 * k * k * k;

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(2, "missing header".into()))?;
    let header = header.map_err(|e| parse_err(2, e.to_string()))?;
    let mut expected = String::from("x,y,z,label");
    for j in 0..width {
        write!(expected, ",f{j}").expect("write to String");
    }
    if header.trim() != expected {
        return Err(parse_err(2, format!("header does not match kernel {k} layout")));
    }

    let mut data = Matrix::with_cols(width);
    let mut coords = Vec::new();
    let mut y_out = Vec::new();
    let mut row = vec![0.0f64; width];
    for (idx, line) in lines {
        let lno = idx + 1;
        let text = line.map_err(|e| parse_err(lno, e.to_string()))?;
        if text.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() != width + 4 {
            return Err(parse_err(
                lno,
                format!("expected {} fields, got {}", width + 4, fields.len()),
            ));
        }
        let mut coord = [0usize; 3];
        for (slot, field) in coord.iter_mut().zip(&fields[..3]) {
            *slot = field
                .trim()
                .parse()
                .map_err(|_| parse_err(lno, format!("bad coordinate {field:?}")))?;
        }
        let label: u8 = fields[3]
            .trim()
            .parse()
            .map_err(|_| parse_err(lno, format!("bad label {:?}", fields[3])))?;
        if label > 1 {
            return Err(parse_err(lno, format!("label must be 0 or 1, got {label}")));
        }
        for (slot, field) in row.iter_mut().zip(&fields[4..]) {
            *slot = field
                .trim()
                .parse()
                .map_err(|_| parse_err(lno, format!("bad feature value {field:?}")))?;
        }
        coords.push((coord[0], coord[1], coord[2]));
        y_out.push(label);
        data.push_row(&row);
    }
    Ok((
        FeatureMatrix {
            kernel_k: k,
            data,
            row_coords: coords,
        },
        y_out,
    ))
}
