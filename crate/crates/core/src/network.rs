//! Fully-connected networks: parameters, forward pass, backpropagation, risk,
//! gradient and Hessian.
//!
//! Layer indices follow the usual convention: layer 0 is the input, layers
//! `1..L-1` are hidden and layer `L` is the affine output layer (no activation).
//! Neuron indices are 0-based.
//!
//! The MSE loss is `ℓ(p, y) = ½‖p − y‖²`, so `∇ℓ = p − y`. Risk and gradient
//! are averages over samples, accumulated in ascending sample order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, DenseMatrix, DenseVector};

/// Default upper bound on the parameter count for Hessian assembly.
pub const DEFAULT_HESSIAN_CAP: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    /// Subgradient at 0 is fixed to 0.
    Relu,
    /// Identity. Mostly useful for closed-form checks.
    Linear,
}

impl Activation {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Linear => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }

    #[inline]
    pub fn second_derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Relu | Activation::Linear => 0.0,
        }
    }

    /// `p` such that `σ(βx) = βᵖσ(x)` for all `β > 0`, if any.
    pub fn homogeneity_degree(self) -> Option<u32> {
        match self {
            Activation::Relu | Activation::Linear => Some(1),
            Activation::Tanh | Activation::Sigmoid => None,
        }
    }

    /// Whether homogeneity also holds for negative scale factors.
    pub fn odd_homogeneous(self) -> bool {
        matches!(self, Activation::Linear)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            "linear" | "identity" => Ok(Activation::Linear),
            other => Err(Error::InvalidArgument(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// `½‖p − y‖²`.
    #[default]
    Mse,
}

impl Loss {
    pub fn value(self, prediction: &[f64], target: &[f64]) -> f64 {
        match self {
            Loss::Mse => {
                0.5 * prediction
                    .iter()
                    .zip(target)
                    .map(|(p, y)| (p - y) * (p - y))
                    .sum::<f64>()
            }
        }
    }

    pub fn gradient(self, prediction: &[f64], target: &[f64]) -> Vec<f64> {
        match self {
            Loss::Mse => prediction.iter().zip(target).map(|(p, y)| p - y).collect(),
        }
    }

    /// Hessian of the loss in its first argument applied to `v`.
    pub fn hessian_vector(self, _prediction: &[f64], _target: &[f64], v: &[f64]) -> Vec<f64> {
        match self {
            Loss::Mse => v.to_vec(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Loss::Mse => "mse",
        }
    }
}

impl FromStr for Loss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mse" => Ok(Loss::Mse),
            other => Err(Error::InvalidArgument(format!("unknown loss '{other}'"))),
        }
    }
}

/// Layer widths `(m_0, …, m_L)` plus the hidden activation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    widths: Vec<usize>,
    activation: Activation,
}

impl Architecture {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least one hidden layer (L >= 2), got widths {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidArchitecture(format!("all widths must be >= 1, got {widths:?}")));
        }
        Ok(Architecture { widths, activation })
    }

    /// Number of weight layers `L`.
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn width(&self, layer: usize) -> usize {
        self.widths[layer]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.widths[self.depth()]
    }

    /// `M = Σ_{l=0}^{L-1} (m_l + 1)·m_{l+1}`.
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// Offset of layer `l`'s weights in the vectorized layout.
    pub fn layer_offset(&self, layer: usize) -> usize {
        self.widths[..layer].windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn is_hidden(&self, layer: usize) -> bool {
        layer >= 1 && layer < self.depth()
    }

    pub(crate) fn check_hidden(&self, layer: usize) -> Result<()> {
        if self.is_hidden(layer) {
            Ok(())
        } else {
            Err(Error::InvalidIndex(format!(
                "layer {layer} is not a hidden layer (valid: 1..={})",
                self.depth() - 1
            )))
        }
    }

    pub(crate) fn check_neuron(&self, layer: usize, neuron: usize) -> Result<()> {
        self.check_hidden(layer)?;
        if neuron < self.widths[layer] {
            Ok(())
        } else {
            Err(Error::InvalidIndex(format!(
                "neuron {neuron} out of range for layer {layer} of width {}",
                self.widths[layer]
            )))
        }
    }

    /// Same architecture with `widths[layer] = width`.
    pub fn with_width(&self, layer: usize, width: usize) -> Result<Architecture> {
        let mut widths = self.widths.clone();
        widths[layer] = width;
        Architecture::new(widths, self.activation)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w: Vec<String> = self.widths.iter().map(|m| m.to_string()).collect();
        write!(f, "({}) {}", w.join(","), self.activation)
    }
}

/// Weights `W^[l]` (`m_l × m_{l-1}`) and bias `b^[l]` of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: DenseMatrix,
    pub bias: DenseVector,
}

/// The parameter tuple `(W^[1], b^[1], …, W^[L], b^[L])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    layers: Vec<Layer>,
}

impl NetParams {
    pub fn zeros(arch: &Architecture) -> Self {
        let layers = arch
            .widths()
            .windows(2)
            .map(|w| Layer {
                weights: DenseMatrix::zeros(w[1], w[0]),
                bias: DenseVector::zeros(w[1]),
            })
            .collect();
        NetParams { layers }
    }

    /// Wraps explicit layers; shapes must chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::InvalidArchitecture("need at least two layers".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.weights.rows() {
                return Err(Error::dims("layer bias", layer.weights.rows(), layer.bias.len()));
            }
            if i > 0 && layers[i - 1].weights.rows() != layer.weights.cols() {
                return Err(Error::dims("layer chaining", layers[i - 1].weights.rows(), layer.weights.cols()));
            }
        }
        Ok(NetParams { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Layer `l` in `1..=L`.
    pub fn layer(&self, l: usize) -> &Layer {
        &self.layers[l - 1]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut Layer {
        &mut self.layers[l - 1]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].weights.cols()];
        w.extend(self.layers.iter().map(|l| l.weights.rows()));
        w
    }

    pub fn matches(&self, arch: &Architecture) -> bool {
        self.widths() == arch.widths()
    }

    pub fn check(&self, arch: &Architecture) -> Result<()> {
        if self.matches(arch) {
            Ok(())
        } else {
            Err(Error::dims(
                "parameters vs architecture",
                format!("{:?}", arch.widths()),
                format!("{:?}", self.widths()),
            ))
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.rows() * l.weights.cols() + l.bias.len())
            .sum()
    }

    /// Layout: for `l = 1..L`, `W^[l]` row-major then `b^[l]`.
    pub fn vectorize(&self) -> DenseVector {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.as_slice());
            out.extend_from_slice(&layer.bias);
        }
        out.into()
    }

    pub fn devectorize(v: &[f64], arch: &Architecture) -> Result<Self> {
        if v.len() != arch.param_count() {
            return Err(Error::dims("devectorize", arch.param_count(), v.len()));
        }
        let mut params = NetParams::zeros(arch);
        let mut pos = 0;
        for layer in &mut params.layers {
            let nw = layer.weights.rows() * layer.weights.cols();
            layer.weights.as_mut_slice().copy_from_slice(&v[pos..pos + nw]);
            pos += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&v[pos..pos + nb]);
            pos += nb;
        }
        Ok(params)
    }

    /// `self += alpha · other`, computed entrywise as `self + alpha * other`.
    pub fn add_scaled(&mut self, other: &NetParams, alpha: f64) -> Result<()> {
        if self.widths() != other.widths() {
            return Err(Error::dims("add_scaled", format!("{:?}", self.widths()), format!("{:?}", other.widths())));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.as_mut_slice().iter_mut().zip(b.weights.as_slice()) {
                *x += alpha * y;
            }
            for (x, y) in a.bias.iter_mut().zip(b.bias.iter()) {
                *x += alpha * y;
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.as_slice().iter().all(|v| *v == 0.0) && l.bias.iter().all(|v| *v == 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.as_slice().iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }
}

/// Per-sample feature vectors `f^[0..L]`, feature gradients `g^[1..L]`
/// (`g^[L]` is all ones), pre-activations, and error vectors `z^[1..L]` once a
/// backward pass has run. Vectors are indexed by layer; index 0 of the
/// gradient, pre-activation and error lists is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub(crate) features: Vec<Vec<f64>>,
    pub(crate) preacts: Vec<Vec<f64>>,
    pub(crate) feature_grads: Vec<Vec<f64>>,
    pub(crate) errors: Option<Vec<Vec<f64>>>,
}

impl ForwardCache {
    pub fn depth(&self) -> usize {
        self.features.len() - 1
    }

    pub fn feature(&self, layer: usize) -> &[f64] {
        &self.features[layer]
    }

    pub fn preactivation(&self, layer: usize) -> &[f64] {
        &self.preacts[layer]
    }

    pub fn feature_grad(&self, layer: usize) -> &[f64] {
        &self.feature_grads[layer]
    }

    /// `z^[layer]`, available after [`backward`].
    pub fn error(&self, layer: usize) -> Option<&[f64]> {
        self.errors.as_ref().map(|z| z[layer].as_slice())
    }

    pub fn has_errors(&self) -> bool {
        self.errors.is_some()
    }

    pub fn output(&self) -> &[f64] {
        &self.features[self.depth()]
    }

    pub fn widths(&self) -> Vec<usize> {
        self.features.iter().map(|f| f.len()).collect()
    }
}

/// Inputs `X` (`n × d`) and targets `Y` (`n × d'`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    inputs: DenseMatrix,
    targets: DenseMatrix,
}

impl Dataset {
    pub fn new(inputs: DenseMatrix, targets: DenseMatrix) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::dims("dataset rows", inputs.rows(), targets.rows()));
        }
        if inputs.rows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if !inputs.as_slice().iter().chain(targets.as_slice()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("dataset"));
        }
        Ok(Dataset { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.cols()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn target(&self, i: usize) -> &[f64] {
        self.targets.row(i)
    }

    pub fn inputs(&self) -> &DenseMatrix {
        &self.inputs
    }

    pub fn targets(&self) -> &DenseMatrix {
        &self.targets
    }

    /// First `count` samples, in order.
    pub fn head(&self, count: usize) -> Result<Dataset> {
        let count = count.min(self.len());
        let d = self.input_dim();
        let dy = self.output_dim();
        Dataset::new(
            DenseMatrix::from_row_major(count, d, self.inputs.as_slice()[..count * d].to_vec())?,
            DenseMatrix::from_row_major(count, dy, self.targets.as_slice()[..count * dy].to_vec())?,
        )
    }

    /// Per-column `(min, max)` of the inputs.
    pub fn input_bounds(&self) -> Vec<(f64, f64)> {
        (0..self.input_dim())
            .map(|j| {
                (0..self.len()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
                    let v = self.inputs.get(i, j);
                    (lo.min(v), hi.max(v))
                })
            })
            .collect()
    }

    pub(crate) fn check(&self, arch: &Architecture) -> Result<()> {
        if self.input_dim() != arch.input_dim() {
            return Err(Error::dims("dataset input dim", arch.input_dim(), self.input_dim()));
        }
        if self.output_dim() != arch.output_dim() {
            return Err(Error::dims("dataset output dim", arch.output_dim(), self.output_dim()));
        }
        Ok(())
    }
}

/// Runs the network on `x`, returning the output and the forward cache.
pub fn forward(params: &NetParams, arch: &Architecture, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    params.check(arch)?;
    if x.len() != arch.input_dim() {
        return Err(Error::dims("forward input", arch.input_dim(), x.len()));
    }
    let cache = forward_unchecked(params, arch.activation(), x);
    Ok((cache.output().to_vec(), cache))
}

/// Output only.
pub fn predict(params: &NetParams, arch: &Architecture, x: &[f64]) -> Result<Vec<f64>> {
    forward(params, arch, x).map(|(out, _)| out)
}

pub(crate) fn forward_unchecked(params: &NetParams, act: Activation, x: &[f64]) -> ForwardCache {
    forward_with_first(params, act, x, None)
}

/// Forward pass; `first_t`, when given, is `(W^[1])ᵀ` and lets the first
/// layer run as contiguous updates per nonzero input. Both paths add the
/// terms in the same order, so they agree bit for bit.
fn forward_with_first(params: &NetParams, act: Activation, x: &[f64], first_t: Option<&DenseMatrix>) -> ForwardCache {
    let depth = params.depth();
    let mut features = Vec::with_capacity(depth + 1);
    let mut preacts = Vec::with_capacity(depth + 1);
    let mut grads = Vec::with_capacity(depth + 1);
    features.push(x.to_vec());
    preacts.push(Vec::new());
    grads.push(Vec::new());
    let mut nz: Vec<usize> = Vec::new();
    for l in 1..=depth {
        let layer = params.layer(l);
        let prev = &features[l - 1];
        nz.clear();
        nz.extend(prev.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, _)| k));
        let rows = layer.weights.rows();
        let u: Vec<f64> = match (l, first_t) {
            (1, Some(wt)) => {
                let mut acc = vec![0.0; wt.cols()];
                for &k in &nz {
                    let xk = prev[k];
                    for (a, w) in acc.iter_mut().zip(wt.row(k)) {
                        *a += w * xk;
                    }
                }
                acc.iter().zip(layer.bias.iter()).map(|(a, b)| a + b).collect()
            }
            (1, None) => (0..rows)
                .map(|j| {
                    let row = layer.weights.row(j);
                    let mut acc = 0.0;
                    for &k in &nz {
                        acc += row[k] * prev[k];
                    }
                    acc + layer.bias[j]
                })
                .collect(),
            _ => {
                // Sums over hidden neurons must not depend on their order.
                let mut terms = Vec::with_capacity(nz.len() + 1);
                (0..rows)
                    .map(|j| {
                        let row = layer.weights.row(j);
                        terms.clear();
                        terms.extend(nz.iter().map(|&k| row[k] * prev[k]));
                        terms.push(layer.bias[j]);
                        numerics::invariant_sum(&terms)
                    })
                    .collect()
            }
        };
        if l == depth {
            grads.push(vec![1.0; u.len()]);
            features.push(u.clone());
        } else {
            grads.push(u.iter().map(|&v| act.derivative(v)).collect());
            features.push(u.iter().map(|&v| act.eval(v)).collect());
        }
        preacts.push(u);
    }
    ForwardCache {
        features,
        preacts,
        feature_grads: grads,
        errors: None,
    }
}

/// Fills the error vectors: `z^[L] = ∇ℓ`, `z^[l] = (W^[l+1])ᵀ (z^[l+1] ∘ g^[l+1])`.
pub fn backward(
    params: &NetParams,
    arch: &Architecture,
    cache: ForwardCache,
    loss: Loss,
    y: &[f64],
) -> Result<ForwardCache> {
    params.check(arch)?;
    if cache.widths() != arch.widths() {
        return Err(Error::dims("backward cache", format!("{:?}", arch.widths()), format!("{:?}", cache.widths())));
    }
    if y.len() != arch.output_dim() {
        return Err(Error::dims("backward target", arch.output_dim(), y.len()));
    }
    Ok(backward_unchecked(params, cache, loss, y))
}

pub(crate) fn backward_unchecked(params: &NetParams, mut cache: ForwardCache, loss: Loss, y: &[f64]) -> ForwardCache {
    let depth = params.depth();
    let mut z = vec![Vec::new(); depth + 1];
    z[depth] = loss.gradient(cache.output(), y);
    for l in (2..=depth).rev() {
        let w = &params.layer(l).weights;
        let deltas: Vec<(usize, f64)> = (0..w.rows())
            .map(|j| (j, z[l][j] * cache.feature_grads[l][j]))
            .filter(|(_, d)| *d != 0.0)
            .collect();
        z[l - 1] = if l == depth {
            let mut below = vec![0.0; w.cols()];
            for &(j, d) in &deltas {
                for (b, wjk) in below.iter_mut().zip(w.row(j)) {
                    *b += wjk * d;
                }
            }
            below
        } else {
            // Summing over the hidden neurons of layer l: order-independent.
            let mut terms = Vec::with_capacity(deltas.len());
            (0..w.cols())
                .map(|k| {
                    terms.clear();
                    terms.extend(deltas.iter().map(|&(j, d)| w.get(j, k) * d));
                    numerics::invariant_sum(&terms)
                })
                .collect()
        };
    }
    cache.errors = Some(z);
    cache
}

/// Mean loss over the dataset.
pub fn risk(params: &NetParams, arch: &Architecture, data: &Dataset, loss: Loss) -> Result<f64> {
    params.check(arch)?;
    data.check(arch)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for i in 0..data.len() {
        let cache = forward_unchecked(params, arch.activation(), data.input(i));
        total += loss.value(cache.output(), data.target(i));
    }
    Ok(total / data.len() as f64)
}

/// Gradient of the risk, in [`NetParams::vectorize`] layout.
pub fn gradient(params: &NetParams, arch: &Architecture, data: &Dataset, loss: Loss) -> Result<DenseVector> {
    risk_and_gradient(params, arch, data, loss).map(|(_, g)| g.vectorize())
}

/// Risk and gradient from a single pass. The risk is bit-identical to [`risk`].
pub fn risk_and_gradient(
    params: &NetParams,
    arch: &Architecture,
    data: &Dataset,
    loss: Loss,
) -> Result<(f64, NetParams)> {
    params.check(arch)?;
    data.check(arch)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let depth = arch.depth();
    let mut grad = NetParams::zeros(arch);
    let mut total = 0.0;
    let mut nz: Vec<usize> = Vec::new();
    // First-layer weights and their gradient are handled transposed: one
    // contiguous row per input coordinate, which suits sparse inputs.
    let first_t = params.layer(1).weights.transpose();
    let mut first_grad_t = DenseMatrix::zeros(first_t.rows(), first_t.cols());
    for i in 0..data.len() {
        let cache = forward_with_first(params, arch.activation(), data.input(i), Some(&first_t));
        total += loss.value(cache.output(), data.target(i));
        let cache = backward_unchecked(params, cache, loss, data.target(i));
        let z = cache.errors.as_ref().expect("backward fills errors");
        for l in 1..=depth {
            let prev = &cache.features[l - 1];
            nz.clear();
            nz.extend(prev.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, _)| k));
            let g = &cache.feature_grads[l];
            let layer = grad.layer_mut(l);
            for j in 0..g.len() {
                let delta = z[l][j] * g[j];
                if delta == 0.0 {
                    continue;
                }
                layer.bias[j] += delta;
                if l == 1 {
                    continue;
                }
                let row = layer.weights.row_mut(j);
                for &k in &nz {
                    row[k] += delta * prev[k];
                }
            }
            if l == 1 {
                let deltas: Vec<f64> = g.iter().zip(&z[1]).map(|(gj, zj)| zj * gj).collect();
                for &k in &nz {
                    let f = prev[k];
                    for (w, d) in first_grad_t.row_mut(k).iter_mut().zip(&deltas) {
                        *w += d * f;
                    }
                }
            }
        }
    }
    grad.layer_mut(1).weights = first_grad_t.transpose();
    let n = data.len() as f64;
    for layer in &mut grad.layers {
        for v in layer.weights.as_mut_slice() {
            *v /= n;
        }
        for v in layer.bias.iter_mut() {
            *v /= n;
        }
    }
    Ok((total / n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMethod {
    /// Exact second-order pass (Hessian-vector products against unit vectors).
    #[default]
    Analytic,
    /// Central differences of the analytic gradient.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianOptions {
    pub method: HessianMethod,
    pub cap: usize,
    /// Finite-difference step; `None` uses [`numerics::default_fd_step`].
    pub fd_step: Option<f64>,
}

impl Default for HessianOptions {
    fn default() -> Self {
        HessianOptions {
            method: HessianMethod::Analytic,
            cap: DEFAULT_HESSIAN_CAP,
            fd_step: None,
        }
    }
}

/// Risk Hessian with default options (analytic, symmetrized).
pub fn hessian(params: &NetParams, arch: &Architecture, data: &Dataset, loss: Loss) -> Result<DenseMatrix> {
    hessian_with(params, arch, data, loss, &HessianOptions::default())
}

/// Risk Hessian as symmetrized central differences of the analytic gradient.
pub fn hessian_fd(params: &NetParams, arch: &Architecture, data: &Dataset, loss: Loss) -> Result<DenseMatrix> {
    hessian_with(
        params,
        arch,
        data,
        loss,
        &HessianOptions {
            method: HessianMethod::FiniteDifference,
            ..HessianOptions::default()
        },
    )
}

pub fn hessian_with(
    params: &NetParams,
    arch: &Architecture,
    data: &Dataset,
    loss: Loss,
    opts: &HessianOptions,
) -> Result<DenseMatrix> {
    params.check(arch)?;
    data.check(arch)?;
    let m = arch.param_count();
    if m > opts.cap {
        return Err(Error::HessianCapExceeded { count: m, cap: opts.cap });
    }
    match opts.method {
        HessianMethod::Analytic => analytic_hessian(params, arch, data, loss),
        HessianMethod::FiniteDifference => {
            let x = params.vectorize();
            let h = opts.fd_step.unwrap_or_else(|| numerics::default_fd_step(&x));
            numerics::fd_hessian(
                |v| match NetParams::devectorize(v, arch).and_then(|p| gradient(&p, arch, data, loss)) {
                    Ok(g) => g.into_inner(),
                    Err(_) => vec![f64::NAN; m],
                },
                &x,
                h,
            )
        }
    }
}

fn analytic_hessian(params: &NetParams, arch: &Architecture, data: &Dataset, loss: Loss) -> Result<DenseMatrix> {
    let m = arch.param_count();
    let caches: Vec<ForwardCache> = (0..data.len())
        .map(|i| {
            let c = forward_unchecked(params, arch.activation(), data.input(i));
            backward_unchecked(params, c, loss, data.target(i))
        })
        .collect();
    let mut h = DenseMatrix::zeros(m, m);
    let mut unit = vec![0.0; m];
    for j in 0..m {
        unit[j] = 1.0;
        let dir = NetParams::devectorize(&unit, arch)?;
        unit[j] = 0.0;
        let col = hvp_with_caches(params, arch, data, loss, &caches, &dir);
        for (i, v) in col.iter().enumerate() {
            h.set(i, j, *v);
        }
    }
    h.symmetrized()
}

/// Exact Hessian-vector product `∇²R_S(θ) · v` for a direction `v` shaped like `params`.
pub fn hessian_vector_product(
    params: &NetParams,
    arch: &Architecture,
    data: &Dataset,
    loss: Loss,
    direction: &NetParams,
) -> Result<DenseVector> {
    params.check(arch)?;
    direction.check(arch)?;
    data.check(arch)?;
    let caches: Vec<ForwardCache> = (0..data.len())
        .map(|i| {
            let c = forward_unchecked(params, arch.activation(), data.input(i));
            backward_unchecked(params, c, loss, data.target(i))
        })
        .collect();
    Ok(hvp_with_caches(params, arch, data, loss, &caches, direction).into())
}

/// Directional derivative of the backprop recursions (forward-over-reverse).
fn hvp_with_caches(
    params: &NetParams,
    arch: &Architecture,
    data: &Dataset,
    loss: Loss,
    caches: &[ForwardCache],
    dir: &NetParams,
) -> Vec<f64> {
    let depth = arch.depth();
    let act = arch.activation();
    let mut acc = NetParams::zeros(arch);
    for (i, cache) in caches.iter().enumerate() {
        let z = cache.errors.as_ref().expect("caches carry errors");
        // tangent of features and feature gradients
        let mut rf: Vec<Vec<f64>> = vec![vec![0.0; arch.input_dim()]];
        let mut rg: Vec<Vec<f64>> = vec![Vec::new()];
        for l in 1..=depth {
            let w = &params.layer(l).weights;
            let dw = &dir.layer(l).weights;
            let db = &dir.layer(l).bias;
            let prev = &cache.features[l - 1];
            let rprev = &rf[l - 1];
            let ru: Vec<f64> = (0..w.rows())
                .map(|j| {
                    let a: f64 = dw.row(j).iter().zip(prev).map(|(x, y)| x * y).sum();
                    let b: f64 = w.row(j).iter().zip(rprev).map(|(x, y)| x * y).sum();
                    a + b + db[j]
                })
                .collect();
            if l == depth {
                rg.push(vec![0.0; ru.len()]);
                rf.push(ru);
            } else {
                let u = &cache.preacts[l];
                let g = &cache.feature_grads[l];
                rg.push(ru.iter().zip(u).map(|(r, &u)| act.second_derivative(u) * r).collect());
                rf.push(ru.iter().zip(g).map(|(r, g)| g * r).collect());
            }
        }
        let mut rz = loss.hessian_vector(cache.output(), data.target(i), &rf[depth]);
        for l in (1..=depth).rev() {
            let g = &cache.feature_grads[l];
            let delta: Vec<f64> = z[l].iter().zip(g).map(|(a, b)| a * b).collect();
            let rdelta: Vec<f64> = (0..g.len()).map(|j| rz[j] * g[j] + z[l][j] * rg[l][j]).collect();
            let prev = &cache.features[l - 1];
            let rprev = &rf[l - 1];
            let out = acc.layer_mut(l);
            for j in 0..g.len() {
                out.bias[j] += rdelta[j];
                let row = out.weights.row_mut(j);
                for k in 0..prev.len() {
                    row[k] += rdelta[j] * prev[k] + delta[j] * rprev[k];
                }
            }
            if l > 1 {
                let w = &params.layer(l).weights;
                let dw = &dir.layer(l).weights;
                let mut below = vec![0.0; w.cols()];
                for j in 0..w.rows() {
                    for (k, b) in below.iter_mut().enumerate() {
                        *b += dw.get(j, k) * delta[j] + w.get(j, k) * rdelta[j];
                    }
                }
                rz = below;
            }
        }
    }
    let n = data.len() as f64;
    acc.vectorize().iter().map(|v| v / n).collect()
}
