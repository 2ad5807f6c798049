//! Small fully connected networks with hand-derived gradients.
//!
//! Architecture is fixed: `in -> 128 -> 128 -> out` with tanh hidden
//! activations and a linear head. The policy head is a masked softmax over
//! edge slots; the value head is a single scalar.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Observation;

pub const HIDDEN: usize = 128;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("input has {got} features, network expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("every action is masked out")]
    AllMasked,
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("parameter shapes do not match")]
    ShapeMismatch,
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn uniform<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (6.0 / inputs as f64).sqrt();
        let mut layer = Self::zeros(inputs, outputs);
        for w in &mut layer.weights {
            *w = rng.gen_range(-bound..bound);
        }
        layer
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| b + dot(row, x)),
        );
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Parameters of one network; also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub out: Vec<f64>,
}

impl MlpParams {
    /// Hidden layers uniform in ±sqrt(6 / fan_in); output layer zero.
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            layers: vec![
                Dense::uniform(in_dim, HIDDEN, rng),
                Dense::uniform(HIDDEN, HIDDEN, rng),
                Dense::zeros(HIDDEN, out_dim),
            ],
        }
    }

    /// Like [`init`](Self::init) but with every layer random; used for
    /// gradient checks where a zero head would hide hidden-layer errors.
    pub fn init_random<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let mut p = Self::init(in_dim, out_dim, rng);
        p.layers[2] = Dense::uniform(HIDDEN, out_dim, rng);
        for layer in &mut p.layers {
            for b in &mut layer.bias {
                *b = rng.gen_range(-0.5..0.5);
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }

    /// All parameter slices in a fixed order.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.in_dim() {
            return Err(NnError::DimMismatch {
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward_cached(&self, x: &[f64], cache: &mut ForwardCache) -> Result<(), NnError> {
        self.check_input(x)?;
        self.layers[0].apply(x, &mut cache.h1);
        cache.h1.iter_mut().for_each(|v| *v = v.tanh());
        self.layers[1].apply(&cache.h1, &mut cache.h2);
        cache.h2.iter_mut().for_each(|v| *v = v.tanh());
        self.layers[2].apply(&cache.h2, &mut cache.out);
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut cache = ForwardCache::default();
        self.forward_cached(x, &mut cache)?;
        Ok(cache.out)
    }

    /// Add the gradient of `upstream · output(x)` into `grads`, reusing the
    /// activations of a prior forward pass on the same input.
    pub fn accumulate_grad(
        &self,
        x: &[f64],
        cache: &ForwardCache,
        upstream: &[f64],
        grads: &mut MlpParams,
    ) -> Result<(), NnError> {
        self.check_input(x)?;
        if upstream.len() != self.out_dim() {
            return Err(NnError::DimMismatch {
                expected: self.out_dim(),
                got: upstream.len(),
            });
        }
        let [g0, g1, g2] = grads.layers.as_mut_slice() else {
            return Err(NnError::ShapeMismatch);
        };
        let (l1, l2) = (&self.layers[1], &self.layers[2]);

        // output layer
        let mut d_h2 = vec![0.0; HIDDEN];
        for (o, &d) in upstream.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            g2.bias[o] += d;
            axpy(d, &cache.h2, &mut g2.weights[o * l2.inputs..(o + 1) * l2.inputs]);
            axpy(d, &l2.weights[o * l2.inputs..(o + 1) * l2.inputs], &mut d_h2);
        }
        // second hidden layer
        let mut d_h1 = vec![0.0; HIDDEN];
        for o in 0..l1.outputs {
            let d = d_h2[o] * (1.0 - cache.h2[o] * cache.h2[o]);
            if d == 0.0 {
                continue;
            }
            g1.bias[o] += d;
            axpy(d, &cache.h1, &mut g1.weights[o * l1.inputs..(o + 1) * l1.inputs]);
            axpy(d, &l1.weights[o * l1.inputs..(o + 1) * l1.inputs], &mut d_h1);
        }
        // first hidden layer
        let inputs = self.layers[0].inputs;
        for o in 0..self.layers[0].outputs {
            let d = d_h1[o] * (1.0 - cache.h1[o] * cache.h1[o]);
            if d == 0.0 {
                continue;
            }
            g0.bias[o] += d;
            axpy(d, x, &mut g0.weights[o * inputs..(o + 1) * inputs]);
        }
        Ok(())
    }

    /// Gradient of `Σ_b upstream_b · output(x_b)` with respect to every
    /// parameter.
    pub fn backward(&self, batch: &[(&[f64], &[f64])]) -> Result<MlpParams, NnError> {
        if batch.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let mut grads = self.zeros_like();
        let mut cache = ForwardCache::default();
        for (x, upstream) in batch {
            self.forward_cached(x, &mut cache)?;
            self.accumulate_grad(x, &cache, upstream, &mut grads)?;
        }
        Ok(grads)
    }

    /// Scale every entry in place.
    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Masked categorical distribution over edge slots.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    /// `-inf` on masked slots.
    pub log_probs: Vec<f64>,
    /// Exactly 0 on masked slots.
    pub probs: Vec<f64>,
    pub entropy: f64,
}

impl PolicyOutput {
    /// Masked softmax of raw logits.
    pub fn from_logits(logits: &[f64], mask: &[bool]) -> Result<Self, NnError> {
        if logits.len() != mask.len() {
            return Err(NnError::DimMismatch {
                expected: logits.len(),
                got: mask.len(),
            });
        }
        let max = logits
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&z, _)| z)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(NnError::AllMasked);
        }
        let sum: f64 = logits
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&z, _)| (z - max).exp())
            .sum();
        let lse = max + sum.ln();
        let mut log_probs = vec![f64::NEG_INFINITY; logits.len()];
        let mut probs = vec![0.0; logits.len()];
        let mut entropy = 0.0;
        for (j, (&z, &m)) in logits.iter().zip(mask).enumerate() {
            if m {
                let lp = z - lse;
                log_probs[j] = lp;
                probs[j] = lp.exp();
                entropy -= probs[j] * lp;
            }
        }
        Ok(Self {
            log_probs,
            probs,
            entropy: entropy.max(0.0),
        })
    }

    /// Gradient with respect to the logits of
    /// `Σ_j d_log_probs[j] · log_probs[j] + d_entropy · entropy`,
    /// where masked slots contribute nothing.
    pub fn logit_grad(&self, mask: &[bool], d_log_probs: &[f64], d_entropy: f64) -> Vec<f64> {
        let total: f64 = d_log_probs
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&d, _)| d)
            .sum();
        self.probs
            .iter()
            .zip(&self.log_probs)
            .zip(mask.iter().zip(d_log_probs))
            .map(|((&p, &lp), (&m, &d))| {
                if !m {
                    0.0
                } else {
                    d - p * total - d_entropy * p * (lp + self.entropy)
                }
            })
            .collect()
    }

    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
            .0
    }

    /// Inverse-CDF draw from `u ∈ [0, 1)`; never returns a masked slot.
    pub fn sample_with(&self, u: f64) -> usize {
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = i;
                if u < acc {
                    return i;
                }
            }
        }
        last
    }
}

pub fn policy_forward(params: &MlpParams, obs: &Observation) -> Result<PolicyOutput, NnError> {
    let logits = params.forward(&obs.features)?;
    PolicyOutput::from_logits(&logits, &obs.mask)
}

pub fn value_forward(params: &MlpParams, obs: &Observation) -> Result<f64, NnError> {
    Ok(params.forward(&obs.features)?[0])
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first: MlpParams,
    pub second: MlpParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        Self {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam step. Parameters are left untouched if any
/// gradient entry is non-finite.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &MlpParams,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), NnError> {
    if !params.same_shape(grads) || !params.same_shape(&state.first) {
        return Err(NnError::ShapeMismatch);
    }
    for (layer, g) in grads.layers.iter().enumerate() {
        if g.weights.iter().chain(&g.bias).any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteGradient { layer });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let tensors = params
        .tensors_mut()
        .zip(grads.tensors())
        .zip(state.first.tensors_mut().zip(state.second.tensors_mut()));
    for ((p, g), (m, v)) in tensors {
        for i in 0..p.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

pub const CHECKPOINT_FORMAT: &str = "leed-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    /// `[outputs, inputs]`
    shape: [usize; 2],
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    layers: Vec<LayerRecord>,
}

impl MlpParams {
    /// JSON checkpoint: a versioned header plus one record per layer with
    /// its `[outputs, inputs]` shape, row-major weights and bias.
    pub fn to_checkpoint(&self) -> String {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    shape: [l.outputs, l.inputs],
                    weights: l.weights.clone(),
                    bias: l.bias.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, NnError> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported format {} v{}",
                file.format, file.version
            )));
        }
        let mut layers = Vec::with_capacity(file.layers.len());
        for (i, rec) in file.layers.into_iter().enumerate() {
            let [outputs, inputs] = rec.shape;
            if rec.weights.len() != outputs * inputs || rec.bias.len() != outputs {
                return Err(NnError::Checkpoint(format!("layer {i} does not match its shape")));
            }
            if let Some(prev) = layers.last() {
                let prev: &Dense = prev;
                if prev.outputs != inputs {
                    return Err(NnError::Checkpoint(format!("layer {i} input width mismatch")));
                }
            }
            layers.push(Dense {
                inputs,
                outputs,
                weights: rec.weights,
                bias: rec.bias,
            });
        }
        if layers.len() != 3 {
            return Err(NnError::Checkpoint("expected three layers".into()));
        }
        Ok(Self { layers })
    }
}
