//! Hessian spectra, neuron grouping and reduction, output comparison and the
//! critical-point diagram built from a batch of training runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{apply_plan, EmbeddingPlan};
use crate::error::{Error, Result};
use crate::network::{self, Architecture, Dataset, Loss, NetParams};
use crate::numerics::{sym_eigen, DenseMatrix};
use crate::training::{detect_critical, Trajectory};

pub const DEFAULT_ZERO_TOL: f64 = 1e-11;
pub const DEFAULT_SIMILARITY: f64 = 0.9;
pub const DEFAULT_AMPLITUDE_REL: f64 = 1e-2;

/// Eigenvalue census of a symmetric matrix at a fixed zero tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub tol: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_zero: usize,
}

impl SpectrumReport {
    pub fn from_eigenvalues(eigenvalues: Vec<f64>, tol: f64) -> Self {
        let n_pos = eigenvalues.iter().filter(|e| **e > tol).count();
        let n_neg = eigenvalues.iter().filter(|e| **e < -tol).count();
        let n_zero = eigenvalues.len() - n_pos - n_neg;
        SpectrumReport { eigenvalues, tol, n_pos, n_neg, n_zero }
    }

    /// Number of eigenvalues with `|λ| ≤ tol`.
    pub fn corank(&self) -> usize {
        self.n_zero
    }

    pub fn with_tol(&self, tol: f64) -> Self {
        Self::from_eigenvalues(self.eigenvalues.clone(), tol)
    }

    /// Writes `index,eigenvalue` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,eigenvalue\n");
        for (i, e) in self.eigenvalues.iter().enumerate() {
            s.push_str(&format!("{i},{e:.17e}\n"));
        }
        s
    }
}

pub fn spectrum(h: &DenseMatrix, tol: f64) -> Result<SpectrumReport> {
    if !(tol >= 0.0) {
        return Err(Error::InvalidArgument(format!("zero tolerance must be >= 0, got {tol}")));
    }
    let eig = sym_eigen(h, false)?;
    Ok(SpectrumReport::from_eigenvalues(eig.eigenvalues, tol))
}

/// Analytic Hessian of the empirical risk followed by [`spectrum`].
pub fn hessian_spectrum(params: &NetParams, arch: &Architecture, data: &Dataset, loss: Loss, tol: f64) -> Result<SpectrumReport> {
    let h = network::hessian(params, arch, data, loss)?;
    spectrum(&h, tol)
}

fn input_row(params: &NetParams, layer: usize, k: usize) -> Vec<f64> {
    let l = params.layer(layer);
    let mut r = l.weights.row(k).to_vec();
    r.push(l.bias[k]);
    r
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity of the augmented input weights `(w_k, b_k)` of the
/// neurons in hidden layer `layer`. Pairs involving a zero row get 0.
pub fn similarity_matrix(params: &NetParams, arch: &Architecture, layer: usize) -> Result<DenseMatrix> {
    params.check(arch)?;
    arch.check_hidden(layer)?;
    let m = arch.width(layer);
    let rows: Vec<Vec<f64>> = (0..m).map(|k| input_row(params, layer, k)).collect();
    let norms: Vec<f64> = rows.iter().map(|r| norm2(r)).collect();
    Ok(DenseMatrix::from_fn(m, m, |i, j| {
        if norms[i] == 0.0 || norms[j] == 0.0 {
            0.0
        } else {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            dot / (norms[i] * norms[j])
        }
    }))
}

/// `‖output column k‖₂ · ‖(w_k, b_k)‖₂` for every neuron of `layer`.
pub fn neuron_amplitudes(params: &NetParams, arch: &Architecture, layer: usize) -> Result<Vec<f64>> {
    params.check(arch)?;
    arch.check_hidden(layer)?;
    let out = &params.layer(layer + 1).weights;
    Ok((0..arch.width(layer))
        .map(|k| norm2(&out.column(k)) * norm2(&input_row(params, layer, k)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronGroup {
    pub layer: usize,
    /// Ascending neuron indices.
    pub members: Vec<usize>,
    /// Highest-amplitude member (lowest index on ties).
    pub representative: usize,
    /// Smallest pairwise similarity inside the group (1 for singletons).
    pub min_similarity: f64,
}

/// Greedy grouping of the neurons of `layer` by input-weight direction.
///
/// Neurons whose amplitude is below `amp_threshold_rel · max amplitude` are
/// left out. The remaining ones seed groups in descending amplitude order; a
/// seed absorbs unassigned neurons, most similar first, as long as the
/// candidate is at least `sim_threshold`-similar to every current member.
pub fn group_neurons(
    params: &NetParams,
    arch: &Architecture,
    layer: usize,
    sim_threshold: f64,
    amp_threshold_rel: f64,
) -> Result<Vec<NeuronGroup>> {
    let sim = similarity_matrix(params, arch, layer)?;
    let amp = neuron_amplitudes(params, arch, layer)?;
    let max_amp = amp.iter().copied().fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..amp.len()).filter(|&k| !(amp[k] < amp_threshold_rel * max_amp)).collect();
    order.sort_by(|&a, &b| amp[b].total_cmp(&amp[a]).then(a.cmp(&b)));
    let mut assigned = vec![false; amp.len()];
    let mut groups = Vec::new();
    for &seed in &order {
        if assigned[seed] {
            continue;
        }
        assigned[seed] = true;
        let mut members = vec![seed];
        let mut cands: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&k| !assigned[k] && sim.get(seed, k) >= sim_threshold)
            .collect();
        cands.sort_by(|&a, &b| sim.get(seed, b).total_cmp(&sim.get(seed, a)).then(a.cmp(&b)));
        for k in cands {
            if members.iter().all(|&j| sim.get(j, k) >= sim_threshold) {
                assigned[k] = true;
                members.push(k);
            }
        }
        let mut min_similarity: f64 = 1.0;
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                min_similarity = min_similarity.min(sim.get(a, b));
            }
        }
        members.sort_unstable();
        groups.push(NeuronGroup { layer, members, representative: seed, min_similarity });
    }
    Ok(groups)
}

/// Collapses each group to its representative `j`, with output column
/// `Σ_k a_k ‖(w_k,b_k)‖ / ‖(w_j,b_j)‖`. Neurons in no group are dropped.
/// The reduced layer lists the groups in ascending representative order.
pub fn reduce_network(
    params: &NetParams,
    arch: &Architecture,
    layer: usize,
    groups: &[NeuronGroup],
) -> Result<(NetParams, Architecture)> {
    params.check(arch)?;
    arch.check_hidden(layer)?;
    let m = arch.width(layer);
    if groups.is_empty() {
        return Err(Error::InvalidArgument("reduction needs at least one group".into()));
    }
    let mut seen = vec![false; m];
    for g in groups {
        if g.layer != layer {
            return Err(Error::InvalidArgument(format!("group for layer {} passed for layer {layer}", g.layer)));
        }
        if !g.members.contains(&g.representative) {
            return Err(Error::InvalidArgument(format!("representative {} is not a member", g.representative)));
        }
        for &k in &g.members {
            if k >= m {
                return Err(Error::InvalidIndex(format!("neuron {k} out of range for width {m}")));
            }
            if std::mem::replace(&mut seen[k], true) {
                return Err(Error::InvalidArgument(format!("neuron {k} appears in two groups")));
            }
        }
    }
    let mut sorted: Vec<&NeuronGroup> = groups.iter().collect();
    sorted.sort_by_key(|g| g.representative);
    let new_arch = arch.with_width(layer, sorted.len())?;
    let mut out = NetParams::zeros(&new_arch);
    let n_in = arch.width(layer - 1);
    let n_out = arch.width(layer + 1);
    for (i, g) in sorted.iter().enumerate() {
        let j = g.representative;
        {
            let src = params.layer(layer);
            let dst = out.layer_mut(layer);
            dst.weights.row_mut(i).copy_from_slice(src.weights.row(j));
            dst.bias[i] = src.bias[j];
        }
        let src_out = &params.layer(layer + 1).weights;
        let col: Vec<f64> = if g.members.len() == 1 {
            src_out.column(j)
        } else {
            let nj = norm2(&input_row(params, layer, j));
            let mut acc = vec![0.0; n_out];
            for &k in &g.members {
                let ratio = norm2(&input_row(params, layer, k)) / nj;
                for (r, a) in acc.iter_mut().enumerate() {
                    *a += src_out.get(r, k) * ratio;
                }
            }
            acc
        };
        for (r, v) in col.into_iter().enumerate() {
            out.layer_mut(layer + 1).weights.set(r, i, v);
        }
    }
    debug_assert_eq!(out.layer(layer).weights.cols(), n_in);
    for l in 1..=arch.depth() {
        if l != layer && l != layer + 1 {
            *out.layer_mut(l) = params.layer(l).clone();
        }
    }
    out.layer_mut(layer + 1).bias = params.layer(layer + 1).bias.clone();
    Ok((out, new_arch))
}

/// Largest L∞ distance between the two networks' outputs over `grid`.
pub fn output_distance(
    p1: &NetParams,
    a1: &Architecture,
    p2: &NetParams,
    a2: &Architecture,
    grid: &[Vec<f64>],
) -> Result<f64> {
    if a1.input_dim() != a2.input_dim() || a1.output_dim() != a2.output_dim() {
        return Err(Error::dims("output comparison", format!("{a1}"), format!("{a2}")));
    }
    let mut worst: f64 = 0.0;
    for x in grid {
        let y1 = network::predict(p1, a1, x)?;
        let y2 = network::predict(p2, a2, x)?;
        for (u, v) in y1.iter().zip(&y2) {
            worst = worst.max((u - v).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub fraction: f64,
    /// `confusion[i][j]` counts samples the first net labels `i` and the second `j`.
    pub confusion: Vec<Vec<usize>>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples on which both networks predict the same arg-max class.
pub fn prediction_agreement(
    p1: &NetParams,
    a1: &Architecture,
    p2: &NetParams,
    a2: &Architecture,
    data: &Dataset,
) -> Result<Agreement> {
    if a1.input_dim() != data.input_dim() || a2.input_dim() != data.input_dim() {
        return Err(Error::dims("agreement input", data.input_dim(), format!("{a1} / {a2}")));
    }
    if a1.output_dim() != a2.output_dim() {
        return Err(Error::dims("agreement output", a1.output_dim(), a2.output_dim()));
    }
    let c = a1.output_dim();
    let mut confusion = vec![vec![0usize; c]; c];
    let mut same = 0usize;
    for i in 0..data.len() {
        let u = argmax(&network::predict(p1, a1, data.input(i))?);
        let v = argmax(&network::predict(p2, a2, data.input(i))?);
        confusion[u][v] += 1;
        same += usize::from(u == v);
    }
    Ok(Agreement { fraction: same as f64 / data.len() as f64, confusion })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagramOptions {
    /// Hidden width every representative is embedded into.
    pub target_width: usize,
    /// Relative loss tolerance for matching candidates.
    pub loss_tol: f64,
    /// Output-fingerprint L∞ tolerance for matching candidates.
    pub output_tol: f64,
    pub grad_threshold: f64,
    pub window: usize,
    pub zero_tol: f64,
    pub grid_points: usize,
    pub grid_seed: u64,
}

impl Default for DiagramOptions {
    fn default() -> Self {
        DiagramOptions {
            target_width: 6,
            loss_tol: 1e-6,
            output_tol: 1e-3,
            grad_threshold: 1e-10,
            window: 1000,
            zero_tol: DEFAULT_ZERO_TOL,
            grid_points: 128,
            grid_seed: 0,
        }
    }
}

/// Fixed evaluation points for output fingerprints: an even grid for scalar
/// inputs, seeded uniform points in the data bounding box otherwise.
pub fn fingerprint_grid(data: &Dataset, points: usize, seed: u64) -> Vec<Vec<f64>> {
    let bounds = data.input_bounds();
    let points = points.max(1);
    if bounds.len() == 1 {
        let (a, b) = bounds[0];
        if points == 1 {
            return vec![vec![0.5 * (a + b)]];
        }
        return (0..points).map(|i| vec![a + (b - a) * i as f64 / (points - 1) as f64]).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..points)
        .map(|_| bounds.iter().map(|&(a, b)| if b > a { rng.random_range(a..=b) } else { a }).collect())
        .collect()
}

/// One training run fed to the diagram.
#[derive(Debug, Clone)]
pub struct DiagramRun {
    pub arch: Architecture,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagramEntry {
    pub loss: f64,
    /// Narrowest hidden width among the matched candidates.
    pub source_width: usize,
    /// Hessian corank after embedding into the target width.
    pub degeneracy: usize,
    pub n_neg: usize,
    pub n_pos: usize,
    /// Distinct runs that hit this critical point.
    pub runs: usize,
    pub candidates: usize,
    #[serde(skip)]
    pub fingerprint: Vec<f64>,
    #[serde(skip)]
    pub representative: Option<(NetParams, Architecture)>,
}

fn max_hidden_width(arch: &Architecture) -> usize {
    (1..arch.depth()).map(|l| arch.width(l)).max().unwrap_or(0)
}

/// Equal-split plan growing every hidden layer to `target` neurons. Extra
/// neurons go round-robin in descending amplitude order.
pub fn equal_split_plan(params: &NetParams, arch: &Architecture, target: usize) -> Result<EmbeddingPlan> {
    params.check(arch)?;
    let mut plan = EmbeddingPlan::default();
    for l in 1..arch.depth() {
        let m = arch.width(l);
        if m > target {
            return Err(Error::InvalidArgument(format!("layer {l} has width {m} > target width {target}")));
        }
        let extra = target - m;
        if extra == 0 {
            continue;
        }
        let amp = neuron_amplitudes(params, arch, l)?;
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| amp[b].total_cmp(&amp[a]).then(a.cmp(&b)));
        for (rank, &s) in order.iter().enumerate() {
            let k = 1 + extra / m + usize::from(rank < extra % m);
            if k > 1 {
                plan.extend(EmbeddingPlan::equal_split(l, s, k));
            }
        }
    }
    Ok(plan)
}

struct Cluster {
    entry: DiagramEntry,
    run_ids: Vec<usize>,
}

/// Groups the empirical critical points of `runs` by loss and output
/// fingerprint, embeds each group's narrowest representative into
/// `target_width` by equal splitting and reports the Hessian corank there.
/// Candidates with a constant output over the fingerprint grid are dropped.
/// Entries are sorted by loss, then source width.
pub fn build_diagram(runs: &[DiagramRun], data: &Dataset, loss: Loss, opts: &DiagramOptions) -> Result<Vec<DiagramEntry>> {
    let grid = fingerprint_grid(data, opts.grid_points, opts.grid_seed);
    let mut clusters: Vec<Cluster> = Vec::new();
    for (run_id, run) in runs.iter().enumerate() {
        if max_hidden_width(&run.arch) > opts.target_width {
            return Err(Error::InvalidArgument(format!(
                "run {run_id} ({}) is wider than target width {}",
                run.arch, opts.target_width
            )));
        }
        for cand in detect_critical(&run.trajectory, opts.grad_threshold, opts.window) {
            let mut fp = Vec::with_capacity(grid.len() * run.arch.output_dim());
            for x in &grid {
                fp.extend(network::predict(&cand.params, &run.arch, x)?);
            }
            let d = run.arch.output_dim();
            let constant = (0..d).all(|c| {
                let vals = fp.iter().skip(c).step_by(d);
                let lo = vals.clone().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.copied().fold(f64::NEG_INFINITY, f64::max);
                hi - lo <= opts.output_tol
            });
            if constant {
                continue;
            }
            let width = max_hidden_width(&run.arch);
            let hit = clusters.iter_mut().find(|c| {
                let scale = c.entry.loss.abs().max(f64::MIN_POSITIVE);
                (cand.loss - c.entry.loss).abs() <= opts.loss_tol * scale
                    && c.entry.fingerprint.len() == fp.len()
                    && c.entry.fingerprint.iter().zip(&fp).all(|(a, b)| (a - b).abs() <= opts.output_tol)
            });
            match hit {
                Some(c) => {
                    c.entry.candidates += 1;
                    if !c.run_ids.contains(&run_id) {
                        c.run_ids.push(run_id);
                    }
                    if width < c.entry.source_width {
                        c.entry.source_width = width;
                        c.entry.loss = cand.loss;
                        c.entry.fingerprint = fp;
                        c.entry.representative = Some((cand.params, run.arch.clone()));
                    }
                }
                None => clusters.push(Cluster {
                    entry: DiagramEntry {
                        loss: cand.loss,
                        source_width: width,
                        degeneracy: 0,
                        n_neg: 0,
                        n_pos: 0,
                        runs: 0,
                        candidates: 1,
                        fingerprint: fp,
                        representative: Some((cand.params, run.arch.clone())),
                    },
                    run_ids: vec![run_id],
                }),
            }
        }
    }
    let mut entries = Vec::with_capacity(clusters.len());
    for c in clusters {
        let mut e = c.entry;
        e.runs = c.run_ids.len();
        let (p, a) = e.representative.as_ref().expect("every cluster has a representative");
        let plan = equal_split_plan(p, a, opts.target_width)?;
        let (wide, wide_arch) = apply_plan(p, a, &plan)?;
        let rep = hessian_spectrum(&wide, &wide_arch, data, loss, opts.zero_tol)?;
        e.degeneracy = rep.corank();
        e.n_neg = rep.n_neg;
        e.n_pos = rep.n_pos;
        entries.push(e);
    }
    entries.sort_by(|a, b| a.loss.total_cmp(&b.loss).then(a.source_width.cmp(&b.source_width)));
    Ok(entries)
}
