//! Sentence encoding and the MLP engine shared by the topic, sentiment and
//! classifier networks.
//!
//! The encoder is a signed feature-hashing stand-in for a pretrained
//! sentence encoder: unigram keys `"u:" + token` and bigram keys
//! `"b:" + left + " " + right` are hashed with 64-bit FNV-1a; the bucket is
//! `hash % dim` and the sign is the top bit (set means -1). The summed
//! vector is L2-normalized.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Rng};

pub const DEFAULT_DIM: usize = 512;

/// Sparse storage of a fixed-dimension sentence embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceVector {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SentenceVector {
    pub fn zeros(dim: usize) -> Self {
        SentenceVector {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Build from a dense vector, dropping exact zeros.
    pub fn from_dense(dense: &[f64]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i as u32, v))
            .unzip();
        SentenceVector {
            dim: dense.len(),
            indices,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] = v;
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SentenceVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[i] * other.values[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn cosine(&self, other: &SentenceVector) -> f64 {
        let d = self.norm() * other.norm();
        if d == 0.0 {
            0.0
        } else {
            self.dot(other) / d
        }
    }
}

pub trait SentenceEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode(&self, tokens: &[String]) -> SentenceVector;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEncoder {
    dim: usize,
}

impl Default for HashingEncoder {
    fn default() -> Self {
        HashingEncoder { dim: DEFAULT_DIM }
    }
}

impl HashingEncoder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("encoder_dim", "must be positive"));
        }
        Ok(HashingEncoder { dim })
    }
}

fn fnv1a64(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

impl SentenceEncoder for HashingEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, tokens: &[String]) -> SentenceVector {
        let mut dense = vec![0.0; self.dim];
        let mut add = |h: u64| {
            let bucket = (h % self.dim as u64) as usize;
            dense[bucket] += if h >> 63 == 1 { -1.0 } else { 1.0 };
        };
        for t in tokens {
            add(fnv1a64(&[b"u:", t.as_bytes()]));
        }
        for w in tokens.windows(2) {
            add(fnv1a64(&[b"b:", w[0].as_bytes(), b" ", w[1].as_bytes()]));
        }
        let norm = dense.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            dense.iter_mut().for_each(|v| *v /= norm);
        }
        SentenceVector::from_dense(&dense)
    }
}

/// Borrowed network input.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    Dense(&'a [f64]),
    Sparse {
        dim: usize,
        indices: &'a [u32],
        values: &'a [f64],
    },
}

impl Input<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Input::Dense(x) => x.len(),
            Input::Sparse { dim, .. } => *dim,
        }
    }
}

pub trait AsInput {
    fn as_input(&self) -> Input<'_>;
}

impl AsInput for [f64] {
    fn as_input(&self) -> Input<'_> {
        Input::Dense(self)
    }
}

impl AsInput for Vec<f64> {
    fn as_input(&self) -> Input<'_> {
        Input::Dense(self)
    }
}

impl AsInput for SentenceVector {
    fn as_input(&self) -> Input<'_> {
        Input::Sparse {
            dim: self.dim,
            indices: &self.indices,
            values: &self.values,
        }
    }
}

impl<T: AsInput + ?Sized> AsInput for &T {
    fn as_input(&self) -> Input<'_> {
        (**self).as_input()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation value.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Mutually exclusive classes; targets are one-hot.
    Softmax,
    /// Independent labels; targets are multi-hot.
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MLPSpec {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub output: OutputKind,
    pub n_outputs: usize,
}

impl MLPSpec {
    pub fn new(input_dim: usize, hidden_sizes: Vec<usize>, output: OutputKind, n_outputs: usize) -> Self {
        MLPSpec {
            input_dim,
            hidden_sizes,
            activation: Activation::Relu,
            dropout_rate: 0.0,
            output,
            n_outputs,
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.n_outputs == 0 || self.hidden_sizes.contains(&0) {
            return Err(Error::config("mlp", "layer dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate", "must lie in [0, 1)"));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.input_dim;
        for &h in self.hidden_sizes.iter().chain(std::iter::once(&self.n_outputs)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weight_decay: f64,
    /// Stop after this many epochs without a lower training loss; 0 disables.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 32,
            epochs: 200,
            seed: 0,
            weight_decay: 0.0,
            patience: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", "must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn forward_dense(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.biases).map(|(row, b)| {
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }

    fn forward(&self, input: Input<'_>, out: &mut Vec<f64>) {
        match input {
            Input::Dense(x) => self.forward_dense(x, out),
            Input::Sparse { indices, values, .. } => {
                out.clear();
                out.extend_from_slice(&self.biases);
                for (&j, &v) in indices.iter().zip(values) {
                    let j = j as usize;
                    for (o, acc) in out.iter_mut().enumerate() {
                        *acc += self.weights[o * self.inputs + j] * v;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MLPModel {
    pub spec: MLPSpec,
    pub layers: Vec<Layer>,
    pub meta: TrainingMeta,
}

/// Per-layer parameter gradients, same layout as [`Layer`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &MLPModel) -> Self {
        Gradients {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    fn clear(&mut self) {
        self.weights.iter_mut().for_each(|w| w.fill(0.0));
        self.biases.iter_mut().for_each(|b| b.fill(0.0));
    }

    /// Flattened in [`MLPModel::parameters`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Inverted-dropout mask: each unit is kept with probability `1 - rate` and
/// kept units are scaled by `1 / (1 - rate)`.
pub fn sample_dropout_mask(rng: &mut Rng, n: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    (0..n)
        .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
        .collect()
}

struct Trace {
    /// Post-activation hidden values (before dropout).
    hidden: Vec<Vec<f64>>,
    /// Dropout factors per hidden layer, when training with dropout.
    masks: Vec<Option<Vec<f64>>>,
    /// Hidden values as fed to the next layer.
    fed: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl MLPModel {
    /// Random initialization: weights uniform in ±sqrt(6 / (fan_in + fan_out)),
    /// zero biases.
    pub fn init(spec: MLPSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seed::rng(seed);
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    inputs: fan_in,
                    outputs: fan_out,
                    weights: (0..fan_in * fan_out)
                        .map(|_| rng.random_range(-bound..bound))
                        .collect(),
                    biases: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(MLPModel {
            spec,
            layers,
            meta: TrainingMeta {
                seed,
                ..TrainingMeta::default()
            },
        })
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Flattened parameters: per layer, weights (row-major) then biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_parameters());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_parameters() {
            return Err(Error::Dimension {
                expected: self.n_parameters(),
                got: params.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    fn check_input(&self, input: &Input<'_>) -> Result<()> {
        if input.dim() != self.spec.input_dim {
            return Err(Error::Dimension {
                expected: self.spec.input_dim,
                got: input.dim(),
            });
        }
        Ok(())
    }

    fn forward(&self, input: Input<'_>, mut dropout: Option<&mut Rng>) -> Trace {
        let n_hidden = self.layers.len() - 1;
        let mut trace = Trace {
            hidden: Vec::with_capacity(n_hidden),
            masks: Vec::with_capacity(n_hidden),
            fed: Vec::with_capacity(n_hidden),
            logits: Vec::new(),
        };
        let rate = self.spec.dropout_rate;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            if l == 0 {
                layer.forward(input, &mut z);
            } else {
                layer.forward_dense(&trace.fed[l - 1], &mut z);
            }
            if l == n_hidden {
                trace.logits = z;
                break;
            }
            let h: Vec<f64> = z.into_iter().map(|v| self.spec.activation.apply(v)).collect();
            let mask = match dropout.as_deref_mut() {
                Some(rng) if rate > 0.0 => Some(sample_dropout_mask(rng, h.len(), rate)),
                _ => None,
            };
            let fed = match &mask {
                Some(m) => h.iter().zip(m).map(|(a, f)| a * f).collect(),
                None => h.clone(),
            };
            trace.hidden.push(h);
            trace.masks.push(mask);
            trace.fed.push(fed);
        }
        trace
    }

    fn output_of(&self, logits: &[f64]) -> Vec<f64> {
        match self.spec.output {
            OutputKind::Softmax => softmax(logits),
            OutputKind::Sigmoid => logits.iter().map(|&z| sigmoid(z)).collect(),
        }
    }

    fn sample_loss(&self, logits: &[f64], target: &[f64]) -> f64 {
        match self.spec.output {
            OutputKind::Softmax => {
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                logits.iter().zip(target).map(|(z, t)| t * (lse - z)).sum()
            }
            OutputKind::Sigmoid => logits
                .iter()
                .zip(target)
                .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
                .sum(),
        }
    }

    /// Accumulate one sample's gradient into `grads`; returns its loss.
    fn accumulate(&self, input: Input<'_>, target: &[f64], dropout: Option<&mut Rng>, grads: &mut Gradients) -> f64 {
        let trace = self.forward(input, dropout);
        let loss = self.sample_loss(&trace.logits, target);
        let out = self.output_of(&trace.logits);
        let mut delta: Vec<f64> = out.iter().zip(target).map(|(p, t)| p - t).collect();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let gw = &mut grads.weights[l];
            for (gb, d) in grads.biases[l].iter_mut().zip(&delta) {
                *gb += d;
            }
            if l == 0 {
                match input {
                    Input::Dense(x) => {
                        for (o, &d) in delta.iter().enumerate() {
                            if d != 0.0 {
                                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                                row.iter_mut().zip(x).for_each(|(g, v)| *g += d * v);
                            }
                        }
                    }
                    Input::Sparse { indices, values, .. } => {
                        for (o, &d) in delta.iter().enumerate() {
                            if d != 0.0 {
                                for (&j, &v) in indices.iter().zip(values) {
                                    gw[o * layer.inputs + j as usize] += d * v;
                                }
                            }
                        }
                    }
                }
                break;
            }
            let x = &trace.fed[l - 1];
            let mut back = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let grow = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for j in 0..layer.inputs {
                    grow[j] += d * x[j];
                    back[j] += d * row[j];
                }
            }
            let h = &trace.hidden[l - 1];
            if let Some(mask) = &trace.masks[l - 1] {
                back.iter_mut().zip(mask).for_each(|(b, m)| *b *= m);
            }
            delta = back
                .iter()
                .zip(h)
                .map(|(b, &a)| b * self.spec.activation.derivative(a))
                .collect();
        }
        loss
    }

    /// Mean loss over `data` plus `weight_decay / 2 * sum(w^2)` over weight
    /// matrices, and its exact gradient, with dropout disabled.
    pub fn loss_and_gradient<X: AsInput>(&self, data: &[(X, Vec<f64>)], weight_decay: f64) -> Result<(f64, Gradients)> {
        let mut grads = Gradients::zeros_like(self);
        let mut loss = 0.0;
        for (x, t) in data {
            let input = x.as_input();
            self.check_input(&input)?;
            self.check_target(t)?;
            loss += self.accumulate(input, t, None, &mut grads);
        }
        let n = data.len().max(1) as f64;
        loss /= n;
        for (gw, layer) in grads.weights.iter_mut().zip(&self.layers) {
            for (g, w) in gw.iter_mut().zip(&layer.weights) {
                *g = *g / n + weight_decay * w;
            }
            loss += 0.5 * weight_decay * layer.weights.iter().map(|w| w * w).sum::<f64>();
        }
        for gb in &mut grads.biases {
            gb.iter_mut().for_each(|g| *g /= n);
        }
        Ok((loss, grads))
    }

    fn check_target(&self, t: &[f64]) -> Result<()> {
        if t.len() != self.spec.n_outputs {
            return Err(Error::Dimension {
                expected: self.spec.n_outputs,
                got: t.len(),
            });
        }
        Ok(())
    }

    /// Inference-mode output: class distribution (softmax) or per-label
    /// probabilities (sigmoid).
    pub fn predict<X: AsInput + ?Sized>(&self, x: &X) -> Result<Vec<f64>> {
        let input = x.as_input();
        self.check_input(&input)?;
        let trace = self.forward(input, None);
        Ok(self.output_of(&trace.logits))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&SavedModel {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        })
        .expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let saved: SavedModel = serde_json::from_str(text).map_err(|e| Error::Invalid(format!("model file: {e}")))?;
        if saved.format != MODEL_FORMAT || saved.version != MODEL_VERSION {
            return Err(Error::Invalid(format!(
                "unsupported model container {} v{}",
                saved.format, saved.version
            )));
        }
        let m = saved.model;
        m.spec.validate()?;
        let dims = m.spec.layer_dims();
        let consistent = dims.len() == m.layers.len()
            && dims.iter().zip(&m.layers).all(|(&(i, o), l)| {
                l.inputs == i && l.outputs == o && l.weights.len() == i * o && l.biases.len() == o
            });
        if !consistent {
            return Err(Error::Invalid("model layer shapes do not match spec".into()));
        }
        if m.parameters().iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("model has non-finite parameters".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

const MODEL_FORMAT: &str = "readmit-mlp";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SavedModel {
    format: String,
    version: u32,
    model: MLPModel,
}

/// Minibatch SGD on cross-entropy with inverted dropout on hidden layers.
///
/// Initialization draws from `derive(seed, 0)`; shuffling and dropout draw
/// from `derive(seed, 1)`, so a run is a pure function of its inputs.
pub fn train_mlp<X: AsInput>(spec: &MLPSpec, data: &[(X, Vec<f64>)], config: &TrainConfig) -> Result<MLPModel> {
    let model = MLPModel::init(spec.clone(), seed::derive(config.seed, 0))?;
    continue_training(model, data, config)
}

/// Train an already-initialized model (used to test custom initializations).
pub fn continue_training<X: AsInput>(mut model: MLPModel, data: &[(X, Vec<f64>)], config: &TrainConfig) -> Result<MLPModel> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Fit("empty training set".into()));
    }
    for (x, t) in data {
        model.check_input(&x.as_input())?;
        model.check_target(t)?;
    }
    let mut rng = seed::rng(seed::derive(config.seed, 1));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = Gradients::zeros_like(&model);
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let lr = config.learning_rate;
    for epoch in 0..config.epochs {
        shuffle(&mut rng, &mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.clear();
            for &i in batch {
                let (x, t) = &data[i];
                epoch_loss += model.accumulate(x.as_input(), t, Some(&mut rng), &mut grads);
            }
            let scale = lr / batch.len() as f64;
            let decay = lr * config.weight_decay;
            for (l, layer) in model.layers.iter_mut().enumerate() {
                for (w, g) in layer.weights.iter_mut().zip(&grads.weights[l]) {
                    *w -= scale * g + decay * *w;
                }
                for (b, g) in layer.biases.iter_mut().zip(&grads.biases[l]) {
                    *b -= scale * g;
                }
            }
        }
        epoch_loss /= data.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: epoch_loss,
            });
        }
        history.push(epoch_loss);
        if epoch_loss < best - 1e-12 {
            best = epoch_loss;
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience > 0 && since_best >= config.patience {
                break;
            }
        }
    }
    model.meta = TrainingMeta {
        seed: config.seed,
        epochs_run: history.len(),
        final_loss: *history.last().unwrap_or(&f64::NAN),
        loss_history: history,
    };
    Ok(model)
}

/// Fisher-Yates shuffle driven by the crate RNG.
pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn encoder_is_deterministic_and_normalized() {
        let enc = HashingEncoder::default();
        let a = enc.encode(&toks("mood is stable"));
        assert_eq!(a, enc.encode(&toks("mood is stable")));
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert_eq!(enc.encode(&[]).norm(), 0.0);
        assert_eq!(enc.encode(&[]).dim(), DEFAULT_DIM);
    }

    #[test]
    fn bigrams_distinguish_word_order() {
        let enc = HashingEncoder::default();
        let a = enc.encode(&toks("mood is stable"));
        let b = enc.encode(&toks("stable is mood"));
        assert_ne!(a, b);
        assert!(a.cosine(&b) < 1.0 - 1e-9);
    }

    #[test]
    fn softmax_sums_to_one_and_sigmoid_bounded() {
        let spec = MLPSpec::new(5, vec![4, 3], OutputKind::Softmax, 3);
        let m = MLPModel::init(spec, 3).unwrap();
        let p = m.predict(&vec![0.3, -1.0, 2.0, 0.0, 5.0]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let spec = MLPSpec::new(5, vec![4], OutputKind::Sigmoid, 2);
        let m = MLPModel::init(spec, 3).unwrap();
        let p = m.predict(&vec![30.0, -10.0, 2.0, 0.0, 5.0]).unwrap();
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zeroed_final_layer_gives_uniform_softmax() {
        let spec = MLPSpec::new(3, vec![4, 4], OutputKind::Softmax, 4);
        let mut m = MLPModel::init(spec, 1).unwrap();
        let last = m.layers.last_mut().unwrap();
        last.weights.fill(0.0);
        last.biases.fill(0.0);
        let p = m.predict(&vec![1.0, 2.0, 3.0]).unwrap();
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let spec = MLPSpec::new(3, vec![2], OutputKind::Softmax, 2);
        let m = MLPModel::init(spec.clone(), 1).unwrap();
        assert!(matches!(m.predict(&vec![1.0]), Err(Error::Dimension { expected: 3, got: 1 })));
        let data = vec![(vec![1.0, 2.0, 3.0], vec![1.0, 0.0, 0.0])];
        assert!(train_mlp(&spec, &data, &TrainConfig::default()).is_err());
    }

    #[test]
    fn sparse_and_dense_inputs_agree() {
        let spec = MLPSpec::new(6, vec![5], OutputKind::Sigmoid, 2);
        let m = MLPModel::init(spec, 9).unwrap();
        let dense = vec![0.0, 0.5, 0.0, -0.25, 0.0, 1.0];
        let sparse = SentenceVector::from_dense(&dense);
        let a = m.predict(&dense).unwrap();
        let b = m.predict(&sparse).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let spec = MLPSpec::new(2, vec![3], OutputKind::Softmax, 2).with_dropout(0.5);
        let data = vec![(vec![1.0, 0.0], vec![1.0, 0.0]), (vec![0.0, 1.0], vec![0.0, 1.0])];
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 5,
            weight_decay: 0.1,
            ..TrainConfig::default()
        };
        let trained = train_mlp(&spec, &data, &cfg).unwrap();
        let init = MLPModel::init(spec, seed::derive(cfg.seed, 0)).unwrap();
        assert_eq!(trained.parameters(), init.parameters());
    }

    #[test]
    fn divergence_is_reported() {
        let spec = MLPSpec::new(1, vec![4], OutputKind::Softmax, 2);
        let data = vec![(vec![1e6], vec![1.0, 0.0]), (vec![-1e6], vec![0.0, 1.0])];
        let cfg = TrainConfig {
            learning_rate: 1e6,
            epochs: 50,
            patience: 0,
            ..TrainConfig::default()
        };
        match train_mlp(&spec, &data, &cfg) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn model_json_round_trip_is_exact() {
        let spec = MLPSpec::new(4, vec![3, 2], OutputKind::Sigmoid, 2).with_dropout(0.75);
        let m = MLPModel::init(spec, 5).unwrap();
        let back = MLPModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json(), m.to_json());
    }
}
