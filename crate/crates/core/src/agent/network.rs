//! Shared-encoder network with a Q head (one output per action, exit included)
//! and a classifier head (one logit per pathology), plus exact reverse-mode
//! gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::seed::rng_for;

/// Hidden layer sizes; the desk-scale default is encoder `[64, 64]`, heads `[32]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub encoder: Vec<usize>,
    pub head: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            encoder: vec![64, 64],
            head: vec![32],
        }
    }
}

/// Fully connected layer, `y = x W + b` with `W` of shape `(in, out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-bound..bound));
        Self {
            weights,
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weights: Array2::zeros(self.weights.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }
}

/// Dense stack with ReLU between layers (and after the last one if `relu_output`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub relu_output: bool,
}

#[derive(Debug, Clone)]
struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
}

impl Mlp {
    fn init(sizes: &[usize], relu_output: bool, rng: &mut ChaCha8Rng) -> Self {
        let layers = sizes.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        Self { layers, relu_output }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").weights.ncols()
    }

    fn applies_relu(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.relu_output
    }

    fn forward(&self, x: Array2<f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = current.dot(&layer.weights) + &layer.bias;
            let out = if self.applies_relu(i) {
                z.mapv(|v| v.max(0.0))
            } else {
                z.clone()
            };
            inputs.push(current);
            pre_activations.push(z);
            current = out;
        }
        (current, MlpCache { inputs, pre_activations })
    }

    /// Accumulates parameter gradients into `grads`; returns the input gradient.
    fn backward(&self, cache: &MlpCache, d_out: Array2<f64>, grads: &mut Mlp) -> Array2<f64> {
        let mut delta = d_out;
        for i in (0..self.layers.len()).rev() {
            if self.applies_relu(i) {
                delta.zip_mut_with(&cache.pre_activations[i], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let g = &mut grads.layers[i];
            g.weights += &cache.inputs[i].t().dot(&delta);
            g.bias += &delta.sum_axis(Axis(0));
            delta = delta.dot(&self.layers[i].weights.t());
        }
        delta
    }

    fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
            relu_output: self.relu_output,
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weights.dim() == b.weights.dim() && a.bias.dim() == b.bias.dim()
            })
    }
}

/// Parameters of the whole agent; also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub encoder: Mlp,
    pub q_head: Mlp,
    pub classifier: Mlp,
}

/// Cached activations of one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    encoder: MlpCache,
    q_head: MlpCache,
    classifier: MlpCache,
}

#[derive(Debug, Clone)]
pub struct NetOutput {
    /// `(batch, E + 1)` action values.
    pub q: Array2<f64>,
    /// `(batch, D)` classifier logits.
    pub logits: Array2<f64>,
    /// Row-wise softmax of `logits`.
    pub beliefs: Array2<f64>,
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

impl NetworkParams {
    pub fn init(
        input_dim: usize,
        num_actions: usize,
        num_pathologies: usize,
        arch: &ArchConfig,
        seed: u64,
    ) -> Result<Self, AgentError> {
        if arch.encoder.is_empty() || arch.encoder.contains(&0) || arch.head.contains(&0) {
            return Err(AgentError::Config("layer sizes must be positive and the encoder non-empty".into()));
        }
        let mut rng = rng_for(seed, 0xA11CE);
        let latent = *arch.encoder.last().unwrap();
        let mut enc_sizes = vec![input_dim];
        enc_sizes.extend(&arch.encoder);
        let head = |out: usize| {
            let mut s = vec![latent];
            s.extend(&arch.head);
            s.push(out);
            s
        };
        Ok(Self {
            encoder: Mlp::init(&enc_sizes, true, &mut rng),
            q_head: Mlp::init(&head(num_actions), false, &mut rng),
            classifier: Mlp::init(&head(num_pathologies), false, &mut rng),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn num_actions(&self) -> usize {
        self.q_head.output_dim()
    }

    pub fn num_pathologies(&self) -> usize {
        self.classifier.output_dim()
    }

    pub fn forward(&self, states: ArrayView2<f64>) -> Result<(NetOutput, ForwardCache), AgentError> {
        if states.ncols() != self.input_dim() {
            return Err(AgentError::ShapeMismatch(format!(
                "state width {} but network expects {}",
                states.ncols(),
                self.input_dim()
            )));
        }
        let (latent, encoder) = self.encoder.forward(states.to_owned());
        let (q, q_head) = self.q_head.forward(latent.clone());
        let (logits, classifier) = self.classifier.forward(latent);
        let beliefs = softmax_rows(&logits);
        Ok((
            NetOutput { q, logits, beliefs },
            ForwardCache {
                encoder,
                q_head,
                classifier,
            },
        ))
    }

    /// Q values and belief for a single state.
    pub fn predict(&self, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>), AgentError> {
        let view = ArrayView2::from_shape((1, state.len()), state)
            .map_err(|e| AgentError::ShapeMismatch(e.to_string()))?;
        let (out, _) = self.forward(view)?;
        Ok((out.q.row(0).to_vec(), out.beliefs.row(0).to_vec()))
    }

    /// Parameter gradients given the loss gradients w.r.t. the Q outputs and
    /// the classifier logits of the cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, d_q: Array2<f64>, d_logits: Array2<f64>) -> NetworkParams {
        let mut grads = self.zeros_like();
        let d_latent_q = self.q_head.backward(&cache.q_head, d_q, &mut grads.q_head);
        let d_latent_c = self
            .classifier
            .backward(&cache.classifier, d_logits, &mut grads.classifier);
        self.encoder
            .backward(&cache.encoder, d_latent_q + d_latent_c, &mut grads.encoder);
        grads
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            q_head: self.q_head.zeros_like(),
            classifier: self.classifier.zeros_like(),
        }
    }

    /// Every scalar parameter in a fixed order.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.encoder
            .values()
            .chain(self.q_head.values())
            .chain(self.classifier.values())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.encoder
            .values_mut()
            .chain(self.q_head.values_mut())
            .chain(self.classifier.values_mut())
    }

    pub fn num_params(&self) -> usize {
        self.values().count()
    }

    pub fn same_shape(&self, other: &NetworkParams) -> bool {
        self.encoder.same_shape(&other.encoder)
            && self.q_head.same_shape(&other.q_head)
            && self.classifier.same_shape(&other.classifier)
    }

    pub fn l2_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    /// FNV-1a over the raw bits of every parameter.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.values() {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// `phi <- (1 - rho) phi + rho theta`.
pub fn soft_update(theta: &NetworkParams, phi: &NetworkParams, rho: f64) -> Result<NetworkParams, AgentError> {
    if !theta.same_shape(phi) {
        return Err(AgentError::ShapeMismatch("online and target networks differ".into()));
    }
    let mut out = phi.clone();
    for (p, &t) in out.values_mut().zip(theta.values()) {
        *p = (1.0 - rho) * *p + rho * t;
    }
    Ok(out)
}
