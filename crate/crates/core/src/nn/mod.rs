//! Small feed-forward classifier with hand-written backprop.
//!
//! Every hidden block is `dense -> batch-norm -> relu`; the head is a dense
//! layer followed by a softmax. Parameters are stored row-major with weights
//! shaped `fan_in x fan_out`, so a batch `x` (rows = samples) maps to
//! `x.dot(&w) + b`.

mod adam;
pub mod checkpoint;
pub mod gradcheck;

pub use adam::{adam_step, AdamConfig, OptimizerState};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("input has {got} columns, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("train-mode forward needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),
    #[error("loss gradient has shape {got:?}, expected {expected:?}")]
    GradShape { expected: (usize, usize), got: (usize, usize) },
    #[error("forward cache is stale (cache generation {cache}, network generation {network})")]
    StaleCache { cache: u64, network: u64 },
    #[error("parameter shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_dim: usize,
    #[serde(default = "default_hidden_dims")]
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    #[serde(default = "default_bn_eps")]
    pub batch_norm_eps: f64,
    #[serde(default = "default_bn_momentum")]
    pub batch_norm_momentum: f64,
}

fn default_hidden_dims() -> Vec<usize> {
    vec![128, 256]
}

fn default_bn_eps() -> f64 {
    1e-5
}

fn default_bn_momentum() -> f64 {
    0.1
}

impl NetworkSpec {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: default_hidden_dims(),
            num_classes,
            batch_norm_eps: default_bn_eps(),
            batch_norm_momentum: default_bn_momentum(),
        }
    }

    pub fn with_hidden(mut self, hidden_dims: Vec<usize>) -> Self {
        self.hidden_dims = hidden_dims;
        self
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_dim == 0 {
            return Err(NetError::InvalidSpec("input_dim must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(NetError::InvalidSpec("num_classes must be >= 2".into()));
        }
        if let Some(i) = self.hidden_dims.iter().position(|&h| h == 0) {
            return Err(NetError::InvalidSpec(format!("hidden_dims[{i}] must be >= 1")));
        }
        if !(self.batch_norm_eps > 0.0 && self.batch_norm_eps.is_finite()) {
            return Err(NetError::InvalidSpec("batch_norm_eps must be a small positive number".into()));
        }
        if !(self.batch_norm_momentum > 0.0 && self.batch_norm_momentum < 1.0) {
            return Err(NetError::InvalidSpec("batch_norm_momentum must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Number of trainable scalars (dense weights and biases, BN scale and shift).
    /// Running statistics are buffers, not parameters.
    pub fn parameter_count(&self) -> usize {
        let mut fan_in = self.input_dim;
        let mut total = 0;
        for &h in &self.hidden_dims {
            total += fan_in * h + h + 2 * h;
            fan_in = h;
        }
        total + fan_in * self.num_classes + self.num_classes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(features: usize) -> Self {
        Self {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    pub dense: Dense,
    pub bn: BatchNorm,
}

/// One learner: parameters plus BN running statistics. Equality compares
/// those and ignores the internal mutation counter.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    pub(crate) hidden: Vec<HiddenLayer>,
    pub(crate) head: Dense,
    generation: u64,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.hidden == other.hidden && self.head == other.head
    }
}

/// Softmax output of a forward pass, with the logits it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    pre_relu: Array2<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
}

/// Activations saved by a train-mode forward pass. Eval mode never builds one.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    mode: Mode,
    generation: u64,
    layers: Vec<LayerCache>,
    head_input: Array2<f64>,
}

impl ForwardCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch_size(&self) -> usize {
        self.head_input.nrows()
    }

    /// Pre-BN activations normalized with the batch statistics, per hidden layer.
    pub fn normalized(&self, layer: usize) -> &Array2<f64> {
        &self.layers[layer].xhat
    }

    /// Input that fed the dense layer of hidden block `layer`.
    pub fn layer_input(&self, layer: usize) -> &Array2<f64> {
        &self.layers[layer].input
    }

    pub fn batch_stats(&self, layer: usize) -> (&Array1<f64>, &Array1<f64>) {
        let l = &self.layers[layer];
        (&l.batch_mean, &l.batch_var)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden: Vec<LayerGrads>,
    pub head_weight: Array2<f64>,
    pub head_bias: Array1<f64>,
}

/// Test fixture hook for the gradient checker's detector-sanity run.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    FlipBatchNormGradient,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, limit: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit))
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    probs
}

impl Network {
    /// He-uniform weights for every layer feeding a ReLU, Xavier-uniform for
    /// the head; zero biases; BN at gamma=1, beta=0, mean=0, var=1.
    pub fn new(spec: &NetworkSpec, seed: u64) -> Result<Self, NetError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_in = spec.input_dim;
        let mut hidden = Vec::with_capacity(spec.hidden_dims.len());
        for &h in &spec.hidden_dims {
            let limit = (6.0 / fan_in as f64).sqrt();
            hidden.push(HiddenLayer {
                dense: Dense {
                    weight: uniform_matrix(&mut rng, fan_in, h, limit),
                    bias: Array1::zeros(h),
                },
                bn: BatchNorm::new(h),
            });
            fan_in = h;
        }
        let limit = (6.0 / (fan_in + spec.num_classes) as f64).sqrt();
        let head = Dense {
            weight: uniform_matrix(&mut rng, fan_in, spec.num_classes, limit),
            bias: Array1::zeros(spec.num_classes),
        };
        Ok(Self {
            spec: spec.clone(),
            hidden,
            head,
            generation: 0,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[HiddenLayer] {
        &self.hidden
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    /// Bumped on every parameter update; caches from older generations are rejected.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Trainable tensors in canonical order: per hidden layer weight, bias,
    /// gamma, beta; then head weight, head bias.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(4 * self.hidden.len() + 2);
        for layer in &self.hidden {
            out.push(layer.dense.weight.as_slice().expect("standard layout"));
            out.push(layer.dense.bias.as_slice().expect("standard layout"));
            out.push(layer.bn.gamma.as_slice().expect("standard layout"));
            out.push(layer.bn.beta.as_slice().expect("standard layout"));
        }
        out.push(self.head.weight.as_slice().expect("standard layout"));
        out.push(self.head.bias.as_slice().expect("standard layout"));
        out
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        let mut out = Vec::with_capacity(4 * self.hidden.len() + 2);
        for layer in &mut self.hidden {
            out.push(layer.dense.weight.as_slice_mut().expect("standard layout"));
            out.push(layer.dense.bias.as_slice_mut().expect("standard layout"));
            out.push(layer.bn.gamma.as_slice_mut().expect("standard layout"));
            out.push(layer.bn.beta.as_slice_mut().expect("standard layout"));
        }
        out.push(self.head.weight.as_slice_mut().expect("standard layout"));
        out.push(self.head.bias.as_slice_mut().expect("standard layout"));
        out
    }

    /// Overwrites the trainable parameters, given in [`Network::params`] order.
    pub fn set_params(&mut self, tensors: &[Vec<f64>]) -> Result<(), NetError> {
        let shapes: Vec<usize> = self.params().iter().map(|t| t.len()).collect();
        if tensors.len() != shapes.len() || tensors.iter().zip(&shapes).any(|(t, &n)| t.len() != n) {
            return Err(NetError::ShapeMismatch(format!(
                "expected tensors of lengths {shapes:?}, got {:?}",
                tensors.iter().map(Vec::len).collect::<Vec<_>>()
            )));
        }
        for (dst, src) in self.params_mut().into_iter().zip(tensors) {
            dst.copy_from_slice(src);
        }
        Ok(())
    }

    /// Running statistics flattened as `[mean_0, var_0, mean_1, var_1, ...]`.
    pub fn running_stats(&self) -> Vec<&[f64]> {
        self.hidden
            .iter()
            .flat_map(|l| {
                [
                    l.bn.running_mean.as_slice().expect("standard layout"),
                    l.bn.running_var.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub(crate) fn running_stats_mut(&mut self) -> Vec<&mut [f64]> {
        self.hidden
            .iter_mut()
            .flat_map(|l| {
                [
                    l.bn.running_mean.as_slice_mut().expect("standard layout"),
                    l.bn.running_var.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<(), NetError> {
        if x.ncols() != self.spec.input_dim {
            return Err(NetError::DimensionMismatch {
                expected: self.spec.input_dim,
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Batch-statistics forward that leaves running statistics untouched.
    pub(crate) fn forward_batch_stats(&self, x: ArrayView2<'_, f64>) -> Result<(Output, ForwardCache), NetError> {
        self.check_input(&x)?;
        let n = x.nrows();
        if n < 2 {
            return Err(NetError::BatchTooSmall(n));
        }
        let eps = self.spec.batch_norm_eps;
        let mut layers = Vec::with_capacity(self.hidden.len());
        let mut act = x.to_owned();
        for layer in &self.hidden {
            let z = layer.dense.forward(act.view());
            let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
            let centered = &z - &mean;
            let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
            let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
            let xhat = &centered * &inv_std;
            let pre_relu = &xhat * &layer.bn.gamma + &layer.bn.beta;
            let next = pre_relu.mapv(|v| v.max(0.0));
            layers.push(LayerCache {
                input: std::mem::replace(&mut act, next),
                xhat,
                inv_std,
                pre_relu,
                batch_mean: mean,
                batch_var: var,
            });
        }
        let logits = self.head.forward(act.view());
        let probs = softmax_rows(&logits);
        let cache = ForwardCache {
            mode: Mode::Train,
            generation: self.generation,
            layers,
            head_input: act,
        };
        Ok((Output { logits, probs }, cache))
    }

    /// Train mode: normalizes with batch statistics and folds them into the
    /// running statistics (unbiased variance, PyTorch convention).
    pub fn forward_train(&mut self, x: ArrayView2<'_, f64>) -> Result<(Output, ForwardCache), NetError> {
        let (out, cache) = self.forward_batch_stats(x)?;
        let m = self.spec.batch_norm_momentum;
        let n = cache.batch_size() as f64;
        let unbias = n / (n - 1.0);
        for (layer, lc) in self.hidden.iter_mut().zip(&cache.layers) {
            layer
                .bn
                .running_mean
                .zip_mut_with(&lc.batch_mean, |r, &b| *r = (1.0 - m) * *r + m * b);
            layer
                .bn
                .running_var
                .zip_mut_with(&lc.batch_var, |r, &b| *r = (1.0 - m) * *r + m * b * unbias);
        }
        Ok((out, cache))
    }

    /// Eval mode: running statistics, no cache, no state change.
    pub fn forward_eval(&self, x: ArrayView2<'_, f64>) -> Result<Output, NetError> {
        self.check_input(&x)?;
        let eps = self.spec.batch_norm_eps;
        let mut act = x.to_owned();
        for layer in &self.hidden {
            let z = layer.dense.forward(act.view());
            let inv_std = layer.bn.running_var.mapv(|v| 1.0 / (v + eps).sqrt());
            let y = (z - &layer.bn.running_mean) * &inv_std * &layer.bn.gamma + &layer.bn.beta;
            act = y.mapv(|v| v.max(0.0));
        }
        let logits = self.head.forward(act.view());
        let probs = softmax_rows(&logits);
        Ok(Output { logits, probs })
    }

    pub fn forward(&mut self, x: ArrayView2<'_, f64>, mode: Mode) -> Result<(Output, Option<ForwardCache>), NetError> {
        match mode {
            Mode::Train => self.forward_train(x).map(|(o, c)| (o, Some(c))),
            Mode::Eval => self.forward_eval(x).map(|o| (o, None)),
        }
    }

    /// Backpropagates `dlogits` (gradient of the loss w.r.t. the head's
    /// pre-softmax outputs) through the cached train-mode pass.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Array2<f64>) -> Result<Gradients, NetError> {
        self.backward_with(cache, dlogits, Fault::None)
    }

    #[doc(hidden)]
    pub fn backward_with(&self, cache: &ForwardCache, dlogits: &Array2<f64>, fault: Fault) -> Result<Gradients, NetError> {
        if cache.mode != Mode::Train || cache.generation != self.generation || cache.layers.len() != self.hidden.len() {
            return Err(NetError::StaleCache {
                cache: cache.generation,
                network: self.generation,
            });
        }
        let expected = (cache.batch_size(), self.spec.num_classes);
        if dlogits.dim() != expected {
            return Err(NetError::GradShape {
                expected,
                got: dlogits.dim(),
            });
        }
        let head_weight = cache.head_input.t().dot(dlogits);
        let head_bias = dlogits.sum_axis(Axis(0));
        let mut upstream = dlogits.dot(&self.head.weight.t());

        let n = cache.batch_size() as f64;
        let mut hidden = Vec::with_capacity(self.hidden.len());
        for (layer, lc) in self.hidden.iter().zip(&cache.layers).rev() {
            let mut dy = upstream;
            dy.zip_mut_with(&lc.pre_relu, |g, &y| {
                if y <= 0.0 {
                    *g = 0.0;
                }
            });
            let gamma_grad = (&dy * &lc.xhat).sum_axis(Axis(0));
            let beta_grad = dy.sum_axis(Axis(0));
            let dxhat = dy * &layer.bn.gamma;
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &lc.xhat).sum_axis(Axis(0));
            let mut dz = (dxhat * n - &sum_dxhat - &lc.xhat * &sum_dxhat_xhat) * &(&lc.inv_std / n);
            if fault == Fault::FlipBatchNormGradient {
                dz.mapv_inplace(|v| -v);
            }
            let weight = lc.input.t().dot(&dz);
            let bias = dz.sum_axis(Axis(0));
            upstream = dz.dot(&layer.dense.weight.t());
            hidden.push(LayerGrads {
                weight,
                bias,
                gamma: gamma_grad,
                beta: beta_grad,
            });
        }
        hidden.reverse();
        Ok(Gradients {
            hidden,
            head_weight,
            head_bias,
        })
    }
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            hidden: net
                .hidden
                .iter()
                .map(|l| LayerGrads {
                    weight: Array2::zeros(l.dense.weight.raw_dim()),
                    bias: Array1::zeros(l.dense.bias.len()),
                    gamma: Array1::zeros(l.bn.gamma.len()),
                    beta: Array1::zeros(l.bn.beta.len()),
                })
                .collect(),
            head_weight: Array2::zeros(net.head.weight.raw_dim()),
            head_bias: Array1::zeros(net.head.bias.len()),
        }
    }

    /// Same canonical order as [`Network::params`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(4 * self.hidden.len() + 2);
        for l in &self.hidden {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
            out.push(l.gamma.as_slice().expect("standard layout"));
            out.push(l.beta.as_slice().expect("standard layout"));
        }
        out.push(self.head_weight.as_slice().expect("standard layout"));
        out.push(self.head_bias.as_slice().expect("standard layout"));
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.hidden.iter_mut().zip(&other.hidden) {
            a.weight += &b.weight;
            a.bias += &b.bias;
            a.gamma += &b.gamma;
            a.beta += &b.beta;
        }
        self.head_weight += &other.head_weight;
        self.head_bias += &other.head_bias;
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0))
    }
}
