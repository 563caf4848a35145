//! A small dense feed-forward network with plain batch SGD.
//!
//! Parameters live in one flat vector in canonical order: layer by layer,
//! each layer's weight matrix (input-major, `w[i * out + j]` connects input
//! `i` to output `j`) followed by its bias vector. Gradients use the same
//! layout and are *sums* over the batch, not means; the learning rate absorbs
//! the scaling.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RandomSource;

pub const DEFAULT_LAYERS: [usize; 4] = [784, 128, 64, 10];
const CHECKPOINT_MAGIC: &[u8; 4] = b"SUAM";
const CHECKPOINT_VERSION: u32 = 1;
/// Probability floor used by the cross-entropy loss.
const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite loss at sample {sample}")]
    NonFinite { sample: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("bad dataset file: {0}")]
    Dataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Tanh => 2,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        [Activation::Relu, Activation::Sigmoid, Activation::Tanh].into_iter().find(|a| a.tag() == t)
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Output layer and the loss attached to it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Softmax probabilities with cross-entropy against class labels.
    #[default]
    SoftmaxCrossEntropy,
    /// Identity output with squared error `½‖y − t‖²` per sample.
    LinearMse,
}

impl Head {
    fn tag(self) -> u8 {
        match self {
            Head::SoftmaxCrossEntropy => 0,
            Head::LinearMse => 1,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        [Head::SoftmaxCrossEntropy, Head::LinearMse].into_iter().find(|h| h.tag() == t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub layers: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub head: Head,
}

impl Default for Architecture {
    fn default() -> Self {
        Self { layers: DEFAULT_LAYERS.to_vec(), activation: Activation::Relu, head: Head::SoftmaxCrossEntropy }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.layers.len() < 2 || self.layers.contains(&0) {
            return Err(NnError::Shape(format!("need at least two non-empty layers, got {:?}", self.layers)));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    arch: Architecture,
    seed: u64,
    params: Vec<f64>,
}

/// Per-layer outputs of a forward pass. `outputs[0]` is the input itself;
/// the last entry holds probabilities (softmax head) or raw outputs (MSE).
#[derive(Clone, Debug)]
pub struct Activations {
    pub outputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("at least the input layer")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Labels(Vec<usize>),
    /// Row-major `rows × output_dim` regression targets.
    Values(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    input_dim: usize,
    inputs: Vec<f64>,
    targets: Target,
}

impl Batch {
    pub fn new(input_dim: usize, inputs: Vec<f64>, targets: Target) -> Result<Self, NnError> {
        if input_dim == 0 || !inputs.len().is_multiple_of(input_dim) {
            return Err(NnError::Shape(format!("{} inputs do not divide into rows of {input_dim}", inputs.len())));
        }
        let rows = inputs.len() / input_dim;
        if let Target::Labels(l) = &targets {
            if l.len() != rows {
                return Err(NnError::Shape(format!("{rows} rows but {} labels", l.len())));
            }
        }
        Ok(Self { input_dim, inputs, targets })
    }

    /// A batch with no rows; contributes a zero gradient.
    pub fn empty(input_dim: usize) -> Self {
        Self { input_dim, inputs: Vec::new(), targets: Target::Labels(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn targets(&self) -> &Target {
        &self.targets
    }

    /// Rows `range` as a new batch.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Batch {
        let inputs = self.inputs[range.start * self.input_dim..range.end * self.input_dim].to_vec();
        let targets = match &self.targets {
            Target::Labels(l) => Target::Labels(l[range].to_vec()),
            Target::Values(v) => {
                let w = v.len() / self.len().max(1);
                Target::Values(v[range.start * w..range.end * w].to_vec())
            }
        };
        Batch { input_dim: self.input_dim, inputs, targets }
    }

    /// Concatenation of several batches with the same input width.
    pub fn concat(parts: &[Batch]) -> Result<Batch, NnError> {
        let Some(first) = parts.first() else {
            return Err(NnError::Shape("nothing to concatenate".into()));
        };
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        let mut values = Vec::new();
        let mut any_values = false;
        for p in parts {
            if p.input_dim != first.input_dim {
                return Err(NnError::Shape("batches differ in input width".into()));
            }
            inputs.extend_from_slice(&p.inputs);
            match &p.targets {
                Target::Labels(l) => labels.extend_from_slice(l),
                Target::Values(v) => {
                    any_values = true;
                    values.extend_from_slice(v)
                }
            }
        }
        if any_values && !labels.is_empty() {
            return Err(NnError::Shape("cannot mix label and value targets".into()));
        }
        let targets = if any_values { Target::Values(values) } else { Target::Labels(labels) };
        Batch::new(first.input_dim, inputs, targets)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
    /// Number of samples summed into `values`.
    pub batch_size: usize,
}

impl Model {
    /// Weights and biases drawn uniformly from `[-1/√fan_in, 1/√fan_in]`.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self, NnError> {
        arch.validate()?;
        let mut rng = RandomSource::seeded(seed);
        let mut params = Vec::with_capacity(arch.parameter_count());
        for w in arch.layers.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] + w[1] {
                params.push(rng.gen_range(-bound..=bound));
            }
        }
        Ok(Self { arch, seed, params })
    }

    pub fn from_params(arch: Architecture, seed: u64, params: Vec<f64>) -> Result<Self, NnError> {
        arch.validate()?;
        let expected = arch.parameter_count();
        if params.len() != expected {
            return Err(NnError::Length { expected, got: params.len() });
        }
        Ok(Self { arch, seed, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.arch.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.arch.layers[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.arch.layers.last().expect("validated")
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params.clone()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn unflatten(&mut self, v: &[f64]) -> Result<(), NnError> {
        if v.len() != self.params.len() {
            return Err(NnError::Length { expected: self.params.len(), got: v.len() });
        }
        self.params.copy_from_slice(v);
        Ok(())
    }

    /// Offsets of (weights, biases) for layer `l`.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.arch.layers.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        let (i, o) = (self.arch.layers[l], self.arch.layers[l + 1]);
        (off, off + i * o)
    }

    pub fn weight(&self, layer: usize, from: usize, to: usize) -> f64 {
        let (w, _) = self.offsets(layer);
        self.params[w + from * self.arch.layers[layer + 1] + to]
    }

    pub fn bias(&self, layer: usize, unit: usize) -> f64 {
        let (_, b) = self.offsets(layer);
        self.params[b + unit]
    }

    /// Forward pass for one sample.
    pub fn forward(&self, input: &[f64]) -> Result<Activations, NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::Shape(format!("input of {} for a {}-wide layer", input.len(), self.input_dim())));
        }
        let depth = self.arch.layers.len() - 1;
        let mut outputs = vec![input.to_vec()];
        let mut pre = Vec::with_capacity(depth);
        for l in 0..depth {
            let (n_in, n_out) = (self.arch.layers[l], self.arch.layers[l + 1]);
            let (wo, bo) = self.offsets(l);
            let a = &outputs[l];
            let mut z = self.params[bo..bo + n_out].to_vec();
            for (i, &ai) in a.iter().enumerate().take(n_in) {
                if ai == 0.0 {
                    continue;
                }
                let row = &self.params[wo + i * n_out..wo + (i + 1) * n_out];
                for (zj, &w) in z.iter_mut().zip(row) {
                    *zj += ai * w;
                }
            }
            let out = if l + 1 == depth {
                match self.arch.head {
                    Head::SoftmaxCrossEntropy => softmax(&z),
                    Head::LinearMse => z.clone(),
                }
            } else {
                z.iter().map(|&v| self.arch.activation.apply(v)).collect()
            };
            pre.push(z);
            outputs.push(out);
        }
        Ok(Activations { outputs, pre })
    }

    /// Forward pass over a batch; one output row per sample.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<Vec<f64>>, NnError> {
        self.check_batch(batch)?;
        (0..batch.len()).map(|i| self.forward(batch.row(i)).map(|a| a.output().to_vec())).collect()
    }

    fn check_batch(&self, batch: &Batch) -> Result<(), NnError> {
        if batch.input_dim != self.input_dim() {
            return Err(NnError::Shape(format!("batch width {} for input layer {}", batch.input_dim, self.input_dim())));
        }
        match (&batch.targets, self.arch.head) {
            (Target::Labels(l), _) => {
                if let Some(&bad) = l.iter().find(|&&c| c >= self.output_dim()) {
                    return Err(NnError::Shape(format!("label {bad} out of range for {} outputs", self.output_dim())));
                }
            }
            (Target::Values(v), _) => {
                if v.len() != batch.len() * self.output_dim() {
                    return Err(NnError::Shape(format!(
                        "{} target values for {} rows of {}",
                        v.len(),
                        batch.len(),
                        self.output_dim()
                    )));
                }
            }
        }
        Ok(())
    }

    fn target_row(&self, batch: &Batch, i: usize) -> Vec<f64> {
        let k = self.output_dim();
        match &batch.targets {
            Target::Labels(l) => {
                let mut t = vec![0.0; k];
                t[l[i]] = 1.0;
                t
            }
            Target::Values(v) => v[i * k..(i + 1) * k].to_vec(),
        }
    }

    fn sample_loss(&self, out: &[f64], target: &[f64]) -> f64 {
        match self.arch.head {
            Head::SoftmaxCrossEntropy => -out.iter().zip(target).map(|(p, t)| t * p.max(PROB_FLOOR).ln()).sum::<f64>(),
            Head::LinearMse => 0.5 * out.iter().zip(target).map(|(y, t)| (y - t) * (y - t)).sum::<f64>(),
        }
    }

    /// Mean per-sample loss; 0 for an empty batch.
    pub fn loss(&self, batch: &Batch) -> Result<f64, NnError> {
        self.check_batch(batch)?;
        if batch.is_empty() {
            return Ok(0.0);
        }
        Ok(self.loss_sum(batch)? / batch.len() as f64)
    }

    /// Sum of per-sample losses.
    pub fn loss_sum(&self, batch: &Batch) -> Result<f64, NnError> {
        self.check_batch(batch)?;
        let mut total = 0.0;
        for i in 0..batch.len() {
            let act = self.forward(batch.row(i))?;
            let l = self.sample_loss(act.output(), &self.target_row(batch, i));
            if !l.is_finite() {
                return Err(NnError::NonFinite { sample: i });
            }
            total += l;
        }
        Ok(total)
    }

    /// Gradient of the summed per-sample loss over the batch.
    pub fn backward(&self, batch: &Batch) -> Result<GradientVector, NnError> {
        self.check_batch(batch)?;
        let mut grad = vec![0.0; self.params.len()];
        let depth = self.arch.layers.len() - 1;
        for s in 0..batch.len() {
            let act = self.forward(batch.row(s))?;
            let target = self.target_row(batch, s);
            if !self.sample_loss(act.output(), &target).is_finite() {
                return Err(NnError::NonFinite { sample: s });
            }
            // softmax + cross-entropy and identity + squared error share dL/dz = y - t
            let mut delta: Vec<f64> = act.output().iter().zip(&target).map(|(y, t)| y - t).collect();
            for l in (0..depth).rev() {
                let (n_in, n_out) = (self.arch.layers[l], self.arch.layers[l + 1]);
                let (wo, bo) = self.offsets(l);
                let a = &act.outputs[l];
                for (i, &ai) in a.iter().enumerate() {
                    if ai == 0.0 {
                        continue;
                    }
                    let g = &mut grad[wo + i * n_out..wo + (i + 1) * n_out];
                    for (gj, &dj) in g.iter_mut().zip(&delta) {
                        *gj += ai * dj;
                    }
                }
                for (gb, &dj) in grad[bo..bo + n_out].iter_mut().zip(&delta) {
                    *gb += dj;
                }
                if l == 0 {
                    break;
                }
                let mut prev = vec![0.0; n_in];
                for (i, p) in prev.iter_mut().enumerate() {
                    let row = &self.params[wo + i * n_out..wo + (i + 1) * n_out];
                    let back: f64 = row.iter().zip(&delta).map(|(w, d)| w * d).sum();
                    *p = back * self.arch.activation.derivative(act.pre[l - 1][i], act.outputs[l][i]);
                }
                delta = prev;
            }
        }
        Ok(GradientVector { values: grad, batch_size: batch.len() })
    }

    /// `W ← W − η·g`.
    pub fn apply_update(&mut self, g: &[f64], eta: f64) -> Result<(), NnError> {
        if g.len() != self.params.len() {
            return Err(NnError::Length { expected: self.params.len(), got: g.len() });
        }
        for (w, gi) in self.params.iter_mut().zip(g) {
            *w -= eta * gi;
        }
        Ok(())
    }

    /// Fraction of samples whose arg-max output matches the label.
    pub fn accuracy(&self, batch: &Batch) -> Result<f64, NnError> {
        let Target::Labels(labels) = &batch.targets else {
            return Err(NnError::Shape("accuracy needs class labels".into()));
        };
        if labels.is_empty() {
            return Ok(0.0);
        }
        let preds = self.predict(batch)?;
        let hits = preds.iter().zip(labels).filter(|(p, &l)| argmax(p) == l).count();
        Ok(hits as f64 / labels.len() as f64)
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.arch.layers.len() as u32).to_le_bytes());
        for &s in &self.arch.layers {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        out.push(self.arch.activation.tag());
        out.push(self.arch.head.tag());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = bytes;
        let mut take = |n: usize| -> Result<&[u8], NnError> {
            if r.len() < n {
                return Err(NnError::Checkpoint("truncated".into()));
            }
            let (h, t) = r.split_at(n);
            r = t;
            Ok(h)
        };
        if take(4)? != CHECKPOINT_MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        if count > 1024 {
            return Err(NnError::Checkpoint(format!("implausible layer count {count}")));
        }
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            layers.push(u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize);
        }
        let activation = Activation::from_tag(take(1)?[0]).ok_or(NnError::Checkpoint("unknown activation".into()))?;
        let head = Head::from_tag(take(1)?[0]).ok_or(NnError::Checkpoint("unknown head".into()))?;
        let seed = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let len = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let arch = Architecture { layers, activation, head };
        arch.validate()?;
        if len != arch.parameter_count() {
            return Err(NnError::Checkpoint(format!("{len} parameters for architecture needing {}", arch.parameter_count())));
        }
        let body = take(len.checked_mul(8).ok_or(NnError::Checkpoint("overflow".into()))?)?;
        let params = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        if !r.is_empty() {
            return Err(NnError::Checkpoint("trailing bytes".into()));
        }
        Model::from_params(arch, seed, params)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_checkpoint_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let mut buf = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
        Self::from_checkpoint_bytes(&buf)
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

/// Gaussian blobs: `classes` centres drawn from N(0, separation²) per
/// coordinate, samples drawn around them with unit-variance noise scaled by
/// `spread`. Labels cycle through the classes so every class is present.
pub fn gaussian_blobs(
    samples: usize,
    dim: usize,
    classes: usize,
    separation: f64,
    spread: f64,
    rng: &mut RandomSource,
) -> Result<Batch, NnError> {
    if dim == 0 || classes == 0 {
        return Err(NnError::Shape("blobs need positive dimension and class count".into()));
    }
    let centre_dist = Normal::new(0.0, separation).map_err(|e| NnError::Shape(e.to_string()))?;
    let noise = Normal::new(0.0, spread).map_err(|e| NnError::Shape(e.to_string()))?;
    let centres: Vec<Vec<f64>> =
        (0..classes).map(|_| (0..dim).map(|_| centre_dist.sample(rng)).collect()).collect();
    let mut inputs = Vec::with_capacity(samples * dim);
    let mut labels = Vec::with_capacity(samples);
    for s in 0..samples {
        let c = s % classes;
        inputs.extend(centres[c].iter().map(|m| m + noise.sample(rng)));
        labels.push(c);
    }
    Batch::new(dim, inputs, Target::Labels(labels))
}

/// Reads raw 28×28 grayscale images: a little-endian `u32` record count,
/// then per record one label byte followed by 784 pixel bytes. Pixels are
/// scaled to `[0, 1]`.
pub fn load_raw_images(path: &Path) -> Result<Batch, NnError> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    parse_raw_images(&buf)
}

pub fn parse_raw_images(buf: &[u8]) -> Result<Batch, NnError> {
    const PIXELS: usize = 28 * 28;
    if buf.len() < 4 {
        return Err(NnError::Dataset("missing record count".into()));
    }
    let count = u32::from_le_bytes(buf[..4].try_into().expect("4 bytes")) as usize;
    let body = &buf[4..];
    if body.len() != count * (PIXELS + 1) {
        return Err(NnError::Dataset(format!("{} body bytes for {count} records", body.len())));
    }
    let mut inputs = Vec::with_capacity(count * PIXELS);
    let mut labels = Vec::with_capacity(count);
    for rec in body.chunks_exact(PIXELS + 1) {
        if rec[0] > 9 {
            return Err(NnError::Dataset(format!("label {} out of range", rec[0])));
        }
        labels.push(rec[0] as usize);
        inputs.extend(rec[1..].iter().map(|&p| p as f64 / 255.0));
    }
    Batch::new(PIXELS, inputs, Target::Labels(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(layers: &[usize], head: Head) -> Architecture {
        Architecture { layers: layers.to_vec(), activation: Activation::Relu, head }
    }

    #[test]
    fn default_parameter_count() {
        assert_eq!(Architecture::default().parameter_count(), 109_386);
        assert_eq!(Model::init(Architecture::default(), 1).unwrap().parameter_count(), 109_386);
    }

    #[test]
    fn zero_model_outputs_uniform() {
        let a = arch(&[3, 4, 10], Head::SoftmaxCrossEntropy);
        let m = Model::from_params(a.clone(), 0, vec![0.0; a.parameter_count()]).unwrap();
        let out = m.forward(&[1.0, -2.0, 0.5]).unwrap();
        for p in out.output() {
            assert!((p - 0.1).abs() < 1e-15);
        }
        let b = Batch::new(3, vec![0.3; 6], Target::Labels(vec![1, 7])).unwrap();
        assert!((m.loss(&b).unwrap() - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_forward() {
        // 2-2-2, relu hidden, linear output
        // W1 = [[1, -1], [2, 0.5]], b1 = [0, 1]; W2 = [[1, 0], [-1, 2]], b2 = [0.5, -0.5]
        let a = arch(&[2, 2, 2], Head::LinearMse);
        let p = vec![1.0, -1.0, 2.0, 0.5, 0.0, 1.0, 1.0, 0.0, -1.0, 2.0, 0.5, -0.5];
        let m = Model::from_params(a, 0, p).unwrap();
        let act = m.forward(&[1.0, 1.0]).unwrap();
        // z1 = [1 + 2, -1 + 0.5 + 1] = [3, 0.5]
        assert_eq!(act.outputs[1], vec![3.0, 0.5]);
        // z2 = [3 - 0.5 + 0.5, 0 + 1 - 0.5] = [3, 0.5]
        assert_eq!(act.output(), &[3.0, 0.5]);
        assert_eq!(m.weight(1, 1, 0), -1.0);
        assert_eq!(m.bias(0, 1), 1.0);
    }

    #[test]
    fn hand_computed_update() {
        let a = arch(&[2, 2, 2], Head::LinearMse);
        let p = vec![1.0, -1.0, 2.0, 0.5, 0.0, 1.0, 1.0, 0.0, -1.0, 2.0, 0.5, -0.5];
        let mut m = Model::from_params(a, 0, p.clone()).unwrap();
        let b = Batch::new(2, vec![1.0, 1.0], Target::Values(vec![2.0, 0.5])).unwrap();
        let g = m.backward(&b).unwrap();
        // output delta = y - t = [1, 0]; hidden a = [3, 0.5]
        // dW2 = a ⊗ delta = [[3, 0], [0.5, 0]], db2 = [1, 0]
        // hidden delta = W2·delta = [1, -1], both units active
        // dW1 = x ⊗ [1, -1] = [[1, -1], [1, -1]], db1 = [1, -1]
        let expect = vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 3.0, 0.0, 0.5, 0.0, 1.0, 0.0];
        assert_eq!(g.values, expect);
        m.apply_update(&g.values, 0.5).unwrap();
        let want: Vec<f64> = p.iter().zip(&expect).map(|(w, g)| w - 0.5 * g).collect();
        assert_eq!(m.flatten(), want);
    }

    #[test]
    fn batch_gradient_is_sum_of_samples() {
        let a = arch(&[4, 5, 3], Head::SoftmaxCrossEntropy);
        let m = Model::init(a, 9).unwrap();
        let mut rng = RandomSource::seeded(3);
        let b = gaussian_blobs(6, 4, 3, 1.0, 1.0, &mut rng).unwrap();
        let whole = m.backward(&b).unwrap();
        let mut sum = vec![0.0; m.parameter_count()];
        for i in 0..b.len() {
            for (s, g) in sum.iter_mut().zip(m.backward(&b.slice(i..i + 1)).unwrap().values) {
                *s += g;
            }
        }
        for (x, y) in whole.values.iter().zip(&sum) {
            assert!((x - y).abs() < 1e-10);
        }
        // duplicated sample counts twice
        let one = b.slice(0..1);
        let two = Batch::concat(&[one.clone(), one.clone()]).unwrap();
        let g1 = m.backward(&one).unwrap().values;
        let g2 = m.backward(&two).unwrap().values;
        for (x, y) in g1.iter().zip(&g2) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn no_op_updates() {
        let mut m = Model::init(arch(&[3, 3, 2], Head::LinearMse), 4).unwrap();
        let before = m.flatten();
        m.apply_update(&vec![1.0; before.len()], 0.0).unwrap();
        m.apply_update(&vec![0.0; before.len()], 0.3).unwrap();
        assert_eq!(m.flatten(), before);
        assert!(m.apply_update(&[1.0], 0.1).is_err());
    }

    #[test]
    fn loss_edge_cases() {
        let a = arch(&[2, 2], Head::LinearMse);
        let m = Model::from_params(a, 0, vec![0.0; 6]).unwrap();
        let b = Batch::new(2, vec![1.0, 2.0], Target::Values(vec![0.0, 0.0])).unwrap();
        assert_eq!(m.loss(&b).unwrap(), 0.0);

        // large logits make the true class probability 1
        let a = arch(&[1, 2], Head::SoftmaxCrossEntropy);
        let m = Model::from_params(a, 0, vec![0.0, 0.0, 100.0, -100.0]).unwrap();
        let b = Batch::new(1, vec![0.0], Target::Labels(vec![0])).unwrap();
        assert!(m.loss(&b).unwrap() < 1e-9);
    }

    #[test]
    fn batch_of_fifty_gives_fifty_rows() {
        let m = Model::init(arch(&[4, 3, 2], Head::SoftmaxCrossEntropy), 1).unwrap();
        let mut rng = RandomSource::seeded(1);
        let b = gaussian_blobs(50, 4, 2, 2.0, 1.0, &mut rng).unwrap();
        let rows = m.predict(&b).unwrap();
        assert_eq!(rows.len(), 50);
        for r in rows {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let m = Model::init(arch(&[3, 2], Head::SoftmaxCrossEntropy), 1).unwrap();
        assert!(m.forward(&[1.0]).is_err());
        let b = Batch::new(2, vec![1.0, 2.0], Target::Labels(vec![0])).unwrap();
        assert!(m.backward(&b).is_err());
        let b = Batch::new(3, vec![1.0, 2.0, 3.0], Target::Labels(vec![5])).unwrap();
        assert!(m.loss(&b).is_err());
        assert!(Batch::new(3, vec![1.0; 4], Target::Labels(vec![0])).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let a = Architecture { layers: vec![5, 4, 3], activation: Activation::Tanh, head: Head::LinearMse };
        let m = Model::init(a, 77).unwrap();
        let bytes = m.to_checkpoint_bytes();
        assert_eq!(Model::from_checkpoint_bytes(&bytes).unwrap(), m);
        assert!(Model::from_checkpoint_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Model::from_checkpoint_bytes(&bad).is_err());
    }

    #[test]
    fn init_depends_on_seed_only() {
        let a = Model::init(arch(&[4, 4, 2], Head::SoftmaxCrossEntropy), 5).unwrap();
        let b = Model::init(arch(&[4, 4, 2], Head::SoftmaxCrossEntropy), 5).unwrap();
        let c = Model::init(arch(&[4, 4, 2], Head::SoftmaxCrossEntropy), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.flatten(), c.flatten());
        let bound = 0.5;
        assert!(a.params().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn raw_image_format() {
        let mut buf = 2u32.to_le_bytes().to_vec();
        for label in [3u8, 9] {
            buf.push(label);
            buf.extend(std::iter::repeat(255u8).take(784));
        }
        let b = parse_raw_images(&buf).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.targets(), &Target::Labels(vec![3, 9]));
        assert_eq!(b.row(1)[0], 1.0);
        assert!(parse_raw_images(&buf[..100]).is_err());
    }
}
