//! Fully connected ReLU network with a single sigmoid output, trained by
//! mini-batch Adam on the logit cross-entropy.
//!
//! All weights and biases live in one flat vector (per layer: the
//! out×in weight block row-major, then the biases), which makes the
//! analytic gradient directly comparable against finite differences.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::{bce_with_logit, sigmoid};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    /// Hidden layer widths; empty means logistic regression shape.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    /// Adam step size.
    pub step: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            epochs: 100,
            batch: 256,
            step: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub params: MlpParams,
    /// Widths from input to output: [d, hidden..., 1].
    layer_sizes: Vec<usize>,
    params_flat: Vec<f64>,
    seed: u64,
}

/// Per-layer (weight offset, bias offset) into the flat vector, plus the
/// total parameter count.
fn layer_offsets(sizes: &[usize]) -> (Vec<(usize, usize)>, usize) {
    let mut offsets = Vec::with_capacity(sizes.len() - 1);
    let mut cursor = 0;
    for pair in sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        offsets.push((cursor, cursor + fan_in * fan_out));
        cursor += fan_in * fan_out + fan_out;
    }
    (offsets, cursor)
}

/// Work buffers reused across examples: pre-activations and activations
/// for every non-input layer.
struct Workspace {
    zs: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(sizes: &[usize]) -> Self {
        let make = || sizes[1..].iter().map(|&s| vec![0.0; s]).collect::<Vec<_>>();
        Self {
            zs: make(),
            acts: make(),
            deltas: make(),
        }
    }
}

/// Runs the network forward; activations land in `ws` and the final logit
/// is returned.
fn forward(flat: &[f64], sizes: &[usize], offsets: &[(usize, usize)], input: &[f64], ws: &mut Workspace) -> f64 {
    let n_layers = offsets.len();
    for l in 0..n_layers {
        let (w_off, b_off) = offsets[l];
        let fan_in = sizes[l];
        let fan_out = sizes[l + 1];
        for o in 0..fan_out {
            let prev: &[f64] = if l == 0 { input } else { &ws.acts[l - 1] };
            let w_row = &flat[w_off + o * fan_in..w_off + (o + 1) * fan_in];
            ws.zs[l][o] = w_row.iter().zip(prev).map(|(w, a)| w * a).sum::<f64>() + flat[b_off + o];
        }
        let last = l + 1 == n_layers;
        for o in 0..fan_out {
            let z = ws.zs[l][o];
            // Hidden layers are ReLU; the last layer stays linear.
            ws.acts[l][o] = if last { z } else { z.max(0.0) };
        }
    }
    ws.zs[n_layers - 1][0]
}

/// Adds this example's loss gradient (scaled by `scale`) into `grad`.
fn backward(
    flat: &[f64],
    sizes: &[usize],
    offsets: &[(usize, usize)],
    input: &[f64],
    target: f64,
    scale: f64,
    ws: &mut Workspace,
    grad: &mut [f64],
) {
    let n_layers = offsets.len();
    let logit = ws.zs[n_layers - 1][0];
    ws.deltas[n_layers - 1][0] = sigmoid(logit) - target;
    for l in (0..n_layers).rev() {
        let (w_off, b_off) = offsets[l];
        let fan_in = sizes[l];
        let fan_out = sizes[l + 1];
        let delta_owned = std::mem::take(&mut ws.deltas[l]);
        {
            let prev: &[f64] = if l == 0 { input } else { &ws.acts[l - 1] };
            for o in 0..fan_out {
                let dz = delta_owned[o] * scale;
                let g_row = &mut grad[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                for (g, a) in g_row.iter_mut().zip(prev) {
                    *g += dz * a;
                }
                grad[b_off + o] += dz;
            }
        }
        if l > 0 {
            // δ_prev = Wᵀ δ, gated by the ReLU derivative.
            for i in 0..fan_in {
                let mut s = 0.0;
                for o in 0..fan_out {
                    s += flat[w_off + o * fan_in + i] * delta_owned[o];
                }
                ws.deltas[l - 1][i] = if ws.zs[l - 1][i] > 0.0 { s } else { 0.0 };
            }
        }
        ws.deltas[l] = delta_owned;
    }
}

fn check_params(params: &MlpParams) -> Result<()> {
    if params.hidden.contains(&0) {
        return Err(Error::InvalidArgument("hidden layer widths must be at least 1".into()));
    }
    if params.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    if !(params.step > 0.0) || !params.step.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "step size must be finite and positive, got {}",
            params.step
        )));
    }
    Ok(())
}

impl MlpModel {
    /// Freshly initialized network: Glorot-uniform weights drawn layer by
    /// layer from a stream seeded with `seed`, zero biases. No training.
    pub fn init(params: &MlpParams, n_features: usize, seed: u64) -> Result<Self> {
        check_params(params)?;
        if n_features == 0 {
            return Err(Error::InvalidArgument("network needs at least 1 input".into()));
        }
        let mut layer_sizes = Vec::with_capacity(params.hidden.len() + 2);
        layer_sizes.push(n_features);
        layer_sizes.extend_from_slice(&params.hidden);
        layer_sizes.push(1);
        let (offsets, total) = layer_offsets(&layer_sizes);
        let mut flat = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, &(w_off, b_off)) in offsets.iter().enumerate() {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut flat[w_off..b_off] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(Self {
            params: params.clone(),
            layer_sizes,
            params_flat: flat,
            seed,
        })
    }

    pub fn n_features(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn flat_params(&self) -> &[f64] {
        &self.params_flat
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.params_flat.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.params_flat.len(),
                flat.len()
            )));
        }
        self.params_flat.copy_from_slice(flat);
        Ok(())
    }

    fn check_batch(&self, x: &Matrix, y: &[u8]) -> Result<()> {
        if x.n_cols() != self.n_features() {
            return Err(Error::InvalidArgument(format!(
                "expected {} features, got {}",
                self.n_features(),
                x.n_cols()
            )));
        }
        if x.n_rows() != y.len() || x.n_rows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "need matching non-empty rows and labels, got {} and {}",
                x.n_rows(),
                y.len()
            )));
        }
        Ok(())
    }

    /// Mean logit cross-entropy of the current parameters over a batch.
    pub fn batch_loss(&self, x: &Matrix, y: &[u8]) -> Result<f64> {
        self.check_batch(x, y)?;
        let (offsets, _) = layer_offsets(&self.layer_sizes);
        let mut ws = Workspace::new(&self.layer_sizes);
        let mut loss = 0.0;
        for (row, &label) in x.rows().zip(y) {
            let z = forward(&self.params_flat, &self.layer_sizes, &offsets, row, &mut ws);
            loss += bce_with_logit(z, label as f64);
        }
        Ok(loss / x.n_rows() as f64)
    }

    /// Analytic gradient of `batch_loss` with respect to the flat
    /// parameter vector.
    pub fn batch_grad(&self, x: &Matrix, y: &[u8]) -> Result<Vec<f64>> {
        self.check_batch(x, y)?;
        let (offsets, total) = layer_offsets(&self.layer_sizes);
        let mut ws = Workspace::new(&self.layer_sizes);
        let mut grad = vec![0.0; total];
        let scale = 1.0 / x.n_rows() as f64;
        for (row, &label) in x.rows().zip(y) {
            forward(&self.params_flat, &self.layer_sizes, &offsets, row, &mut ws);
            backward(
                &self.params_flat,
                &self.layer_sizes,
                &offsets,
                row,
                label as f64,
                scale,
                &mut ws,
                &mut grad,
            );
        }
        Ok(grad)
    }

    pub fn score_one(&self, query: &[f64]) -> f64 {
        let (offsets, _) = layer_offsets(&self.layer_sizes);
        let mut ws = Workspace::new(&self.layer_sizes);
        sigmoid(forward(&self.params_flat, &self.layer_sizes, &offsets, query, &mut ws))
    }
}

pub fn fit(params: &MlpParams, x: &Matrix, y: &[u8], seed: u64) -> Result<MlpModel> {
    let mut model = MlpModel::init(params, x.n_cols(), seed)?;
    model.check_batch(x, y)?;
    let sizes = model.layer_sizes.clone();
    let (offsets, total) = layer_offsets(&sizes);
    let mut ws = Workspace::new(&sizes);
    let mut grad = vec![0.0; total];
    let mut m = vec![0.0; total];
    let mut v = vec![0.0; total];
    let mut t = 0u32;
    // The init constructor consumed part of the stream; training draws
    // continue from the same deterministic sequence.
    let mut rng = ChaCha8Rng::seed_from_u64(crate::seeds::derive(seed, &[1]));
    let n = x.n_rows();
    let mut indices: Vec<usize> = (0..n).collect();
    for _ in 0..params.epochs {
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            indices.swap(i, j);
        }
        for chunk in indices.chunks(params.batch) {
            grad.fill(0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &row_idx in chunk {
                let row = x.row(row_idx);
                forward(&model.params_flat, &sizes, &offsets, row, &mut ws);
                backward(
                    &model.params_flat,
                    &sizes,
                    &offsets,
                    row,
                    y[row_idx] as f64,
                    scale,
                    &mut ws,
                    &mut grad,
                );
            }
            t += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
            for ((theta, g), (mi, vi)) in model
                .params_flat
                .iter_mut()
                .zip(&grad)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *theta -= params.step * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
    Ok(model)
}
