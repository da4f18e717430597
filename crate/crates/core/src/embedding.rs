//! Width-growing critical embeddings and the trivial critical transforms.
//!
//! A one-step embedding splits hidden neuron `s` of layer `l` in two: the new
//! neuron is appended at index `m_l` with a copy of the input weights and bias,
//! and the output column `w` of neuron `s` is shared as `(1 − α)·w` (kept at
//! `s`) and `α·w` (new column). It is assembled as `T(θ) + α·V(θ)`, where `T`
//! duplicates the input weights and appends a zero output column, and `V` only
//! touches layer `l + 1`: `−w` at column `s`, `+w` at the new column.
//!
//! In the text plan format neurons are 1-based; everywhere in the Rust API they
//! are 0-based.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Architecture, ForwardCache, NetParams};
use crate::numerics::{DenseMatrix, DenseVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStep {
    /// Hidden layer, `1..=L-1`.
    pub layer: usize,
    /// Source neuron (0-based) in the width current when the step applies.
    pub neuron: usize,
    pub alpha: f64,
}

impl EmbeddingStep {
    pub fn new(layer: usize, neuron: usize, alpha: f64) -> Self {
        EmbeddingStep { layer, neuron, alpha }
    }
}

/// Ordered one-step embeddings; widths grow as the plan is applied.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EmbeddingPlan {
    pub steps: Vec<EmbeddingStep>,
}

impl EmbeddingPlan {
    pub fn new(steps: Vec<EmbeddingStep>) -> Self {
        EmbeddingPlan { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Cascade splitting `neuron` into `k` copies that each carry exactly `1/k`
    /// of its output column: step `j = 1..k-1` uses `α = 1/(k − j + 1)`.
    pub fn equal_split(layer: usize, neuron: usize, k: usize) -> Self {
        let steps = (1..k)
            .map(|j| EmbeddingStep::new(layer, neuron, 1.0 / (k - j + 1) as f64))
            .collect();
        EmbeddingPlan { steps }
    }

    pub fn extend(&mut self, other: EmbeddingPlan) {
        self.steps.extend(other.steps);
    }

    /// Checks every step against the architecture it meets and returns the final one.
    pub fn target_architecture(&self, arch: &Architecture) -> Result<Architecture> {
        let mut cur = arch.clone();
        for (i, step) in self.steps.iter().enumerate() {
            cur.check_neuron(step.layer, step.neuron)
                .map_err(|e| Error::InvalidPlanStep { step: i, reason: e.to_string() })?;
            cur = cur.with_width(step.layer, cur.width(step.layer) + 1)?;
        }
        Ok(cur)
    }

    /// Parses comma-separated `layer:neuron:alpha` triples with 1-based neurons,
    /// e.g. `1:2:0.5,1:3:0.5`. Whitespace around tokens is ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut steps = Vec::new();
        if text.trim().is_empty() {
            return Ok(EmbeddingPlan { steps });
        }
        let mut offset = 0;
        for chunk in text.split(',') {
            let lead = chunk.len() - chunk.trim_start().len();
            let at = offset + lead;
            let parts: Vec<&str> = chunk.trim().split(':').collect();
            if parts.len() != 3 {
                return Err(Error::PlanParse {
                    offset: at,
                    reason: format!("expected layer:neuron:alpha, got '{}'", chunk.trim()),
                });
            }
            let bad = |what: &str, tok: &str| Error::PlanParse {
                offset: at,
                reason: format!("invalid {what} '{tok}'"),
            };
            let layer: usize = parts[0].trim().parse().map_err(|_| bad("layer", parts[0]))?;
            let neuron: usize = parts[1].trim().parse().map_err(|_| bad("neuron", parts[1]))?;
            let alpha: f64 = parts[2].trim().parse().map_err(|_| bad("alpha", parts[2]))?;
            if neuron == 0 {
                return Err(Error::PlanParse {
                    offset: at,
                    reason: "neuron indices are 1-based".into(),
                });
            }
            if !alpha.is_finite() {
                return Err(bad("alpha", parts[2]));
            }
            steps.push(EmbeddingStep::new(layer, neuron - 1, alpha));
            offset += chunk.len() + 1;
        }
        Ok(EmbeddingPlan { steps })
    }
}

impl fmt::Display for EmbeddingPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .steps
            .iter()
            .map(|s| format!("{}:{}:{}", s.layer, s.neuron + 1, s.alpha))
            .collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for EmbeddingPlan {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EmbeddingPlan::parse(s)
    }
}

/// `T_{l,s}`: duplicates row `s` of `(W^[l], b^[l])` and appends a zero column to `W^[l+1]`.
///
/// Linear in `params`, so it also applies to direction vectors.
pub fn apply_t(params: &NetParams, arch: &Architecture, layer: usize, neuron: usize) -> Result<(NetParams, Architecture)> {
    params.check(arch)?;
    arch.check_neuron(layer, neuron)?;
    let wide = arch.with_width(layer, arch.width(layer) + 1)?;
    let mut out = params.clone();
    {
        let src = params.layer(layer);
        let (m, n) = (src.weights.rows(), src.weights.cols());
        let mut data = src.weights.as_slice().to_vec();
        data.extend_from_slice(src.weights.row(neuron));
        let dst = out.layer_mut(layer);
        dst.weights = DenseMatrix::from_row_major(m + 1, n, data)?;
        let mut bias = src.bias.to_vec();
        bias.push(src.bias[neuron]);
        dst.bias = DenseVector::from(bias);
    }
    {
        let src = &params.layer(layer + 1).weights;
        let widened = DenseMatrix::from_fn(src.rows(), src.cols() + 1, |i, j| if j < src.cols() { src.get(i, j) } else { 0.0 });
        out.layer_mut(layer + 1).weights = widened;
    }
    Ok((out, wide))
}

/// `V_{l,s}`: zero everywhere except layer `l + 1`, where column `s` holds
/// `−W^[l+1]_{:,s}` and the appended column holds `+W^[l+1]_{:,s}`.
pub fn apply_v(params: &NetParams, arch: &Architecture, layer: usize, neuron: usize) -> Result<NetParams> {
    params.check(arch)?;
    arch.check_neuron(layer, neuron)?;
    let wide = arch.with_width(layer, arch.width(layer) + 1)?;
    let mut out = NetParams::zeros(&wide);
    let src = &params.layer(layer + 1).weights;
    let new_col = arch.width(layer);
    let dst = &mut out.layer_mut(layer + 1).weights;
    for i in 0..src.rows() {
        let w = src.get(i, neuron);
        dst.set(i, neuron, -w);
        dst.set(i, new_col, w);
    }
    Ok(out)
}

/// One-step embedding `T^α_{l,s}(θ) = T_{l,s}(θ) + α·V_{l,s}(θ)`.
pub fn apply_embed(
    params: &NetParams,
    arch: &Architecture,
    layer: usize,
    neuron: usize,
    alpha: f64,
) -> Result<(NetParams, Architecture)> {
    let (mut out, wide) = apply_t(params, arch, layer, neuron)?;
    let v = apply_v(params, arch, layer, neuron)?;
    out.add_scaled(&v, alpha)?;
    Ok((out, wide))
}

/// Predicts the forward/backward cache at `T^α_{l,s}(θ)` from the cache at `θ`
/// without re-running the network.
///
/// Layer `l` gains a copy of entry `s` in its features, pre-activations and
/// feature gradients; if errors are present, `z^[l]_s` becomes `(1 − α)·z_s`
/// and the appended entry is `α·z_s`. All other layers are unchanged.
pub fn embed_cache(cache: &ForwardCache, layer: usize, neuron: usize, alpha: f64) -> Result<ForwardCache> {
    let depth = cache.depth();
    if layer == 0 || layer >= depth {
        return Err(Error::InvalidIndex(format!("layer {layer} is not hidden in a depth-{depth} cache")));
    }
    let width = cache.features[layer].len();
    if neuron >= width {
        return Err(Error::InvalidIndex(format!("neuron {neuron} out of range for cache layer of width {width}")));
    }
    let mut out = cache.clone();
    let f = out.features[layer][neuron];
    out.features[layer].push(f);
    let u = out.preacts[layer][neuron];
    out.preacts[layer].push(u);
    let g = out.feature_grads[layer][neuron];
    out.feature_grads[layer].push(g);
    if let Some(z) = out.errors.as_mut() {
        let zs = z[layer][neuron];
        z[layer][neuron] = (1.0 - alpha) * zs;
        z[layer].push(alpha * zs);
    }
    Ok(out)
}

/// Applies each step of `plan` in order.
pub fn apply_plan(params: &NetParams, arch: &Architecture, plan: &EmbeddingPlan) -> Result<(NetParams, Architecture)> {
    params.check(arch)?;
    let mut cur = (params.clone(), arch.clone());
    for (i, step) in plan.steps.iter().enumerate() {
        cur = apply_embed(&cur.0, &cur.1, step.layer, step.neuron, step.alpha)
            .map_err(|e| Error::InvalidPlanStep { step: i, reason: e.to_string() })?;
    }
    Ok(cur)
}

/// Splits `neuron` into `k` copies, each with `1/k` of its output column.
pub fn equal_split(
    params: &NetParams,
    arch: &Architecture,
    layer: usize,
    neuron: usize,
    k: usize,
) -> Result<(NetParams, Architecture)> {
    if k == 0 {
        return Err(Error::InvalidArgument("equal split needs k >= 1".into()));
    }
    apply_plan(params, arch, &EmbeddingPlan::equal_split(layer, neuron, k))
}

/// The affine set `{θ_B + Σ αᵢ vᵢ}` of critical points obtained from a
/// critical point of a narrower network.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalSubspace {
    pub arch: Architecture,
    /// `T_{l_K,s_K} ⋯ T_{l_1,s_1} θ_A`.
    pub base: NetParams,
    /// `vᵢ = T_{l_K,s_K} ⋯ V_{l_i,s_i} ⋯ T_{l_1,s_1} θ_A`.
    pub basis: Vec<NetParams>,
    /// False when some `W^[l]` of `θ_A` is zero or a chosen source neuron has a
    /// zero output column; the basis may then be dependent.
    pub hypothesis_holds: bool,
    pub warnings: Vec<String>,
}

impl CriticalSubspace {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// `θ_B + Σ αᵢ vᵢ`.
    pub fn point(&self, alphas: &[f64]) -> Result<NetParams> {
        if alphas.len() != self.basis.len() {
            return Err(Error::dims("critical subspace coefficients", self.basis.len(), alphas.len()));
        }
        let mut out = self.base.clone();
        for (v, a) in self.basis.iter().zip(alphas) {
            out.add_scaled(v, *a)?;
        }
        Ok(out)
    }
}

/// Builds the critical affine subspace for the `(layer, neuron)` steps, each
/// indexed against the architecture grown by the preceding steps.
pub fn critical_subspace(params: &NetParams, arch: &Architecture, steps: &[(usize, usize)]) -> Result<CriticalSubspace> {
    params.check(arch)?;
    let mut warnings = Vec::new();
    for l in 1..=arch.depth() {
        if params.layer(l).weights.as_slice().iter().all(|v| *v == 0.0) {
            warnings.push(format!("W^[{l}] is zero"));
        }
    }
    // prefix[i] = T_i ⋯ T_1 θ_A
    let mut prefix = vec![(params.clone(), arch.clone())];
    for (i, &(layer, neuron)) in steps.iter().enumerate() {
        let (p, a) = prefix.last().expect("non-empty");
        a.check_neuron(layer, neuron)
            .map_err(|e| Error::InvalidPlanStep { step: i, reason: e.to_string() })?;
        let w = &p.layer(layer + 1).weights;
        if (0..w.rows()).all(|r| w.get(r, neuron) == 0.0) {
            warnings.push(format!("step {i}: output column of neuron {neuron} in layer {layer} is zero"));
        }
        let next = apply_t(p, a, layer, neuron)?;
        prefix.push(next);
    }
    let mut basis = Vec::with_capacity(steps.len());
    for (i, &(layer, neuron)) in steps.iter().enumerate() {
        let (p, a) = &prefix[i];
        let mut v = apply_v(p, a, layer, neuron)?;
        for (j, &(lj, sj)) in steps.iter().enumerate().skip(i + 1) {
            v = apply_t(&v, &prefix[j].1, lj, sj)?.0;
        }
        basis.push(v);
    }
    let (base, wide) = prefix.pop().expect("non-empty");
    Ok(CriticalSubspace {
        arch: wide,
        base,
        basis,
        hypothesis_holds: warnings.is_empty(),
        warnings,
    })
}

/// Reorders the neurons of hidden layer `layer`: new neuron `i` is old neuron `perm[i]`.
pub fn permute_neurons(params: &NetParams, arch: &Architecture, layer: usize, perm: &[usize]) -> Result<NetParams> {
    params.check(arch)?;
    arch.check_hidden(layer)?;
    let m = arch.width(layer);
    let mut seen = vec![false; m];
    if perm.len() != m || !perm.iter().all(|&p| p < m && !std::mem::replace(&mut seen[p], true)) {
        return Err(Error::InvalidArgument(format!("{perm:?} is not a permutation of 0..{m}")));
    }
    let mut out = params.clone();
    let src = params.layer(layer);
    let inner = &mut out.layer_mut(layer);
    inner.weights = DenseMatrix::from_fn(m, src.weights.cols(), |i, k| src.weights.get(perm[i], k));
    inner.bias = perm.iter().map(|&p| src.bias[p]).collect::<Vec<_>>().into();
    let next = &params.layer(layer + 1).weights;
    out.layer_mut(layer + 1).weights = DenseMatrix::from_fn(next.rows(), m, |j, i| next.get(j, perm[i]));
    Ok(out)
}

/// Scaling transform for `p`-homogeneous activations: input weights and bias
/// of neuron `s` times `β`, its output column times `β^{-p}`.
pub fn scale_neuron(params: &NetParams, arch: &Architecture, layer: usize, neuron: usize, beta: f64) -> Result<NetParams> {
    params.check(arch)?;
    arch.check_neuron(layer, neuron)?;
    if beta == 0.0 || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("scale factor must be finite and nonzero, got {beta}")));
    }
    let act = arch.activation();
    let p = act
        .homogeneity_degree()
        .ok_or_else(|| Error::InvalidArgument(format!("{act} is not a homogeneous activation")))?;
    if beta < 0.0 && !act.odd_homogeneous() {
        return Err(Error::InvalidArgument(format!("{act} is only homogeneous for positive scale factors")));
    }
    let mut out = params.clone();
    {
        let l = out.layer_mut(layer);
        for w in l.weights.row_mut(neuron) {
            *w *= beta;
        }
        l.bias[neuron] *= beta;
    }
    let inv = 1.0 / beta.powi(p as i32);
    let next = &mut out.layer_mut(layer + 1).weights;
    for j in 0..next.rows() {
        let v = next.get(j, neuron);
        next.set(j, neuron, v * inv);
    }
    Ok(out)
}
