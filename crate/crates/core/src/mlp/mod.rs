//! Multilayer perceptron classifier with tanh hidden layers and a softmax
//! output, trained full-batch by scaled conjugate gradient.
//!
//! Parameters live in one flat vector so the optimizer can treat the network
//! as a function of a single point. Layer `l` occupies a row-major
//! `out x in` weight block followed by its `out` biases.

mod scg;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LabeledDataset;

pub use scg::{train_scg, EpochRecord, StopReason, TrainConfig, TrainTrace};

/// Rows per gradient chunk. Chunk sums are combined in a fixed order, so the
/// result does not depend on how many threads run.
const CHUNK_ROWS: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MlpError {
    #[error("a network needs at least an input and an output layer, got {0:?}")]
    TooFewLayers(Vec<usize>),
    #[error("layer sizes must be positive, got {0:?}")]
    EmptyLayer(Vec<usize>),
    #[error("expected {expected} inputs, got {got}")]
    InputDim { expected: usize, got: usize },
    #[error("model has {outputs} outputs but data has {classes} classes")]
    ClassCount { outputs: usize, classes: usize },
    #[error("label {label} outside model range 0..{outputs}")]
    LabelOutOfRange { label: usize, outputs: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{0}")]
    Shape(String),
    #[error("non-finite {what} at epoch {epoch}")]
    NonFinite { what: &'static str, epoch: usize },
    #[error("invalid training config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Softmax,
}

/// Per-input standardization, `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormParams {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    /// Mean and population standard deviation per column; zero spreads map to 1.
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let n = x.first().map_or(0, Vec::len);
        let m = x.len() as f64;
        let mut mean = vec![0.0; n];
        for row in x {
            for (acc, v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        let mut var = vec![0.0; n];
        for row in x {
            for ((acc, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / m).sqrt();
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (((o, v), mu), sd) in out.iter_mut().zip(x).zip(&self.mean).zip(&self.std) {
            *o = (v - mu) / sd;
        }
    }
}

/// Provenance of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub final_grad_norm: f64,
    pub stop_reason: StopReason,
    pub max_epochs: usize,
    pub grad_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
    pub norm: NormParams,
    pub training: Option<TrainingMeta>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn check_sizes(sizes: &[usize]) -> Result<(), MlpError> {
    if sizes.len() < 2 {
        return Err(MlpError::TooFewLayers(sizes.to_vec()));
    }
    if sizes.contains(&0) {
        return Err(MlpError::EmptyLayer(sizes.to_vec()));
    }
    Ok(())
}

impl MlpModel {
    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self, MlpError> {
        check_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_count(layer_sizes));
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            params.extend((0..fan_in * fan_out).map(|_| dist.sample(&mut rng)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            params,
            norm: NormParams::identity(layer_sizes[0]),
            training: None,
        })
    }

    /// Builds a model from per-layer row-major weights (`out x in`) and biases.
    pub fn from_layers(
        layer_sizes: &[usize],
        weights: &[Vec<Vec<f64>>],
        biases: &[Vec<f64>],
        norm: NormParams,
    ) -> Result<Self, MlpError> {
        check_sizes(layer_sizes)?;
        let n_layers = layer_sizes.len() - 1;
        if weights.len() != n_layers || biases.len() != n_layers {
            return Err(MlpError::Shape(format!(
                "expected {n_layers} weight and bias blocks, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        let mut params: Vec<f64> = Vec::with_capacity(param_count(layer_sizes));
        for (l, w) in layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            if weights[l].len() != fan_out || weights[l].iter().any(|row| row.len() != fan_in) {
                return Err(MlpError::Shape(format!("layer {l} weights must be {fan_out}x{fan_in}")));
            }
            if biases[l].len() != fan_out {
                return Err(MlpError::Shape(format!("layer {l} biases must have {fan_out} entries")));
            }
            params.extend(weights[l].iter().flatten());
            params.extend(&biases[l]);
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(MlpError::Shape("non-finite parameter".into()));
        }
        let n_in = layer_sizes[0];
        if norm.mean.len() != n_in || norm.std.len() != n_in {
            return Err(MlpError::Shape(format!("norm params must have {n_in} entries")));
        }
        if norm.mean.iter().chain(&norm.std).any(|v| !v.is_finite()) || norm.std.iter().any(|&s| s <= 0.0) {
            return Err(MlpError::Shape("norm params must be finite with positive std".into()));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            params,
            norm,
            training: None,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn hidden_activation(&self) -> Activation {
        Activation::Tanh
    }

    pub fn output_activation(&self) -> Activation {
        Activation::Softmax
    }

    pub fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        layer_views(&self.layer_sizes, &self.params, layer).0
    }

    pub fn biases(&self, layer: usize) -> ArrayView1<'_, f64> {
        layer_views(&self.layer_sizes, &self.params, layer).1
    }

    /// Row-major weights per layer as nested vectors.
    pub fn weight_rows(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.layer_sizes.len() - 1)
            .map(|l| self.weights(l).outer_iter().map(|r| r.to_vec()).collect())
            .collect()
    }

    pub fn bias_rows(&self) -> Vec<Vec<f64>> {
        (0..self.layer_sizes.len() - 1).map(|l| self.biases(l).to_vec()).collect()
    }

    fn standardize(&self, rows: &[Vec<f64>]) -> Result<Array2<f64>, MlpError> {
        let d = self.n_inputs();
        let mut out = Array2::zeros((rows.len(), d));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(MlpError::InputDim {
                    expected: d,
                    got: row.len(),
                });
            }
            self.norm
                .apply(row, out.row_mut(i).as_slice_mut().expect("standard layout"));
        }
        Ok(out)
    }

    /// Class probabilities for one raw (unstandardized) input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, MlpError> {
        let probs = self.forward_batch(std::slice::from_ref(&x.to_vec()))?;
        Ok(probs.row(0).to_vec())
    }

    /// Class probabilities for raw input rows.
    pub fn forward_batch(&self, rows: &[Vec<f64>]) -> Result<Array2<f64>, MlpError> {
        let xs = self.standardize(rows)?;
        let logits = forward_logits(&self.layer_sizes, &self.params, xs.view(), None);
        Ok(softmax_rows(logits))
    }

    /// Most probable class and its probability; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<(usize, f64), MlpError> {
        Ok(argmax(&self.forward(x)?))
    }

    pub fn predict_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<(usize, f64)>, MlpError> {
        let probs = self.forward_batch(rows)?;
        Ok(probs
            .outer_iter()
            .map(|r| argmax(r.as_slice().expect("standard layout")))
            .collect())
    }
}

pub(crate) fn argmax(p: &[f64]) -> (usize, f64) {
    let mut best = (0, p[0]);
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

fn layer_offset(sizes: &[usize], layer: usize) -> usize {
    param_count(&sizes[..=layer])
}

fn layer_views<'a>(sizes: &[usize], params: &'a [f64], layer: usize) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
    let off = layer_offset(sizes, layer);
    let (fan_in, fan_out) = (sizes[layer], sizes[layer + 1]);
    let w = ArrayView2::from_shape((fan_out, fan_in), &params[off..off + fan_in * fan_out]).expect("sized block");
    let b = ArrayView1::from(&params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out]);
    (w, b)
}

/// Output-layer pre-activations; hidden activations are pushed to `acts` when given.
fn forward_logits(
    sizes: &[usize],
    params: &[f64],
    x: ArrayView2<'_, f64>,
    mut acts: Option<&mut Vec<Array2<f64>>>,
) -> Array2<f64> {
    let n_layers = sizes.len() - 1;
    let mut a = x.to_owned();
    for l in 0..n_layers {
        let (w, b) = layer_views(sizes, params, l);
        let mut z = a.dot(&w.t());
        z += &b;
        if l + 1 == n_layers {
            if let Some(acts) = acts.as_mut() {
                acts.push(a);
            }
            return z;
        }
        z.mapv_inplace(f64::tanh);
        let prev = std::mem::replace(&mut a, z);
        if let Some(acts) = acts.as_mut() {
            acts.push(prev);
        }
    }
    unreachable!("at least one layer")
}

fn softmax_rows(mut z: Array2<f64>) -> Array2<f64> {
    for mut row in z.outer_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    z
}

/// Standardized inputs and labels ready for repeated objective evaluation.
pub(crate) struct Batch {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
}

impl Batch {
    pub fn new(model: &MlpModel, data: &LabeledDataset) -> Result<Self, MlpError> {
        if data.is_empty() {
            return Err(MlpError::EmptyDataset);
        }
        let outputs = model.n_outputs();
        if data.n_classes() > outputs {
            return Err(MlpError::ClassCount {
                outputs,
                classes: data.n_classes(),
            });
        }
        if let Some(&label) = data.y.iter().find(|&&l| l >= outputs) {
            return Err(MlpError::LabelOutOfRange { label, outputs });
        }
        Ok(Self {
            x: model.standardize(&data.x)?,
            y: data.y.clone(),
        })
    }
}

/// Mean cross-entropy of one chunk, summed (not averaged), with its gradient sum.
fn chunk_loss_grad(sizes: &[usize], params: &[f64], x: ArrayView2<'_, f64>, y: &[usize]) -> (f64, Vec<f64>) {
    let n_layers = sizes.len() - 1;
    let mut acts = Vec::with_capacity(n_layers);
    let logits = forward_logits(sizes, params, x, Some(&mut acts));

    let mut loss = 0.0;
    let mut delta = logits;
    for (mut row, &label) in delta.outer_iter_mut().zip(y) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        row.mapv_inplace(|v| (v - lse).exp());
        row[label] -= 1.0;
    }

    let mut grad = vec![0.0; params.len()];
    for l in (0..n_layers).rev() {
        let off = layer_offset(sizes, l);
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let a = &acts[l];
        let gw = delta.t().dot(a);
        grad[off..off + fan_in * fan_out].copy_from_slice(gw.as_slice().expect("standard layout"));
        let gb: Array1<f64> = delta.sum_axis(Axis(0));
        grad[off + fan_in * fan_out..off + fan_in * fan_out + fan_out].copy_from_slice(gb.as_slice().expect("contiguous"));
        if l > 0 {
            let (w, _) = layer_views(sizes, params, l);
            let mut back = delta.dot(&w);
            back.zip_mut_with(a, |d, &act| *d *= 1.0 - act * act);
            delta = back;
        }
    }
    (loss, grad)
}

/// Mean cross-entropy and its gradient at `params`.
pub(crate) fn objective(sizes: &[usize], params: &[f64], batch: &Batch) -> (f64, Vec<f64>) {
    let rows = batch.y.len();
    let starts: Vec<usize> = (0..rows).step_by(CHUNK_ROWS).collect();
    let parts: Vec<(f64, Vec<f64>)> = starts
        .par_iter()
        .map(|&s| {
            let e = (s + CHUNK_ROWS).min(rows);
            chunk_loss_grad(sizes, params, batch.x.slice(ndarray::s![s..e, ..]), &batch.y[s..e])
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for (l, g) in parts {
        loss += l;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    let m = rows as f64;
    grad.iter_mut().for_each(|g| *g /= m);
    (loss / m, grad)
}

/// Mean cross-entropy `-(1/M) sum log p(y_i | x_i)` and its full gradient.
pub fn loss_and_gradient(model: &MlpModel, data: &LabeledDataset) -> Result<(f64, Vec<f64>), MlpError> {
    let batch = Batch::new(model, data)?;
    Ok(objective(&model.layer_sizes, &model.params, &batch))
}

/// Initializes a network and trains it on `data`.
pub fn fit(layer_sizes: &[usize], data: &LabeledDataset, cfg: &TrainConfig) -> Result<(MlpModel, TrainTrace), MlpError> {
    let model = MlpModel::init(layer_sizes, cfg.rng_seed)?;
    train_scg(&model, data, cfg)
}
