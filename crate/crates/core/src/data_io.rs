//! Dataset generation and loading (synthetic 1-D tasks, Iris CSV, MNIST IDX)
//! and the JSON checkpoint format.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Activation, Architecture, Dataset, Layer, Loss, NetParams};
use crate::numerics::{DenseMatrix, DenseVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetFn {
    /// `sin(πx) + 0.5·sin(3πx)`.
    SineMix,
    /// `Σ a·tanh(w·x + b)` over `(a, w, b)` triples.
    TanhSum(Vec<(f64, f64, f64)>),
    /// Piecewise-linear interpolation through `(x, y)` knots, constant beyond
    /// the ends. A single knot gives a constant target.
    Table(Vec<(f64, f64)>),
}

impl TargetFn {
    /// A bump on a gentle slope: `tanh(2x + 2) − tanh(2x − 2) + 0.5·tanh(x)`.
    /// A width-2 tanh student cannot fit it exactly, so on enough samples its
    /// minima sit at positive loss.
    pub fn bump_slope() -> Self {
        TargetFn::TanhSum(vec![(1.0, 2.0, 2.0), (-1.0, 2.0, -2.0), (0.5, 1.0, 0.0)])
    }

    pub fn eval(&self, x: f64) -> f64 {
        use std::f64::consts::PI;
        match self {
            TargetFn::SineMix => (PI * x).sin() + 0.5 * (3.0 * PI * x).sin(),
            TargetFn::TanhSum(units) => units.iter().map(|(a, w, b)| a * (w * x + b).tanh()).sum(),
            TargetFn::Table(knots) => {
                let (first, last) = (knots[0], knots[knots.len() - 1]);
                if x <= first.0 {
                    return first.1;
                }
                if x >= last.0 {
                    return last.1;
                }
                for w in knots.windows(2) {
                    let ((x0, y0), (x1, y1)) = (w[0], w[1]);
                    if x <= x1 {
                        if x1 == x0 {
                            return y1;
                        }
                        return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
                    }
                }
                last.1
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    #[default]
    Equispaced,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub interval: (f64, f64),
    pub target: TargetFn,
    pub noise: f64,
    pub seed: u64,
    pub sampling: Sampling,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 50,
            interval: (-1.0, 1.0),
            target: TargetFn::SineMix,
            noise: 0.0,
            seed: 0,
            sampling: Sampling::Equispaced,
        }
    }
}

impl SyntheticSpec {
    /// The small regression task used by the desk-scale experiments:
    /// [`TargetFn::bump_slope`] on `n` equispaced points in `[−3, 3]` with
    /// noise 0.1 and seed 1.
    pub fn desk(n: usize) -> Self {
        SyntheticSpec {
            n,
            interval: (-3.0, 3.0),
            target: TargetFn::bump_slope(),
            noise: 0.1,
            seed: 1,
            sampling: Sampling::Equispaced,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.interval;
        if self.n == 0 {
            return Err(Error::InvalidArgument("synthetic n must be >= 1".into()));
        }
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidArgument(format!("synthetic interval needs a < b, got [{a}, {b}]")));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::InvalidArgument(format!("noise must be >= 0, got {}", self.noise)));
        }
        if let TargetFn::Table(knots) = &self.target {
            if knots.is_empty() {
                return Err(Error::InvalidArgument("table target needs at least one knot".into()));
            }
            if knots.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
                return Err(Error::NonFinite("table target"));
            }
            if knots.windows(2).any(|w| w[1].0 < w[0].0) {
                return Err(Error::InvalidArgument("table knots must be sorted by x".into()));
            }
        }
        Ok(())
    }
}

/// Deterministic 1-D regression data. Equispaced inputs include both
/// endpoints (the midpoint when `n = 1`); uniform inputs and the Gaussian
/// noise come from one ChaCha8 stream seeded by `spec.seed`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let (a, b) = spec.interval;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let xs: Vec<f64> = match spec.sampling {
        Sampling::Equispaced if spec.n == 1 => vec![0.5 * (a + b)],
        Sampling::Equispaced => (0..spec.n).map(|i| a + (b - a) * i as f64 / (spec.n - 1) as f64).collect(),
        Sampling::Uniform => (0..spec.n).map(|_| rng.random_range(a..=b)).collect(),
    };
    let noise = if spec.noise > 0.0 {
        Some(Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidArgument(e.to_string()))?)
    } else {
        None
    };
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| spec.target.eval(x) + noise.as_ref().map_or(0.0, |d| d.sample(&mut rng)))
        .collect();
    Dataset::new(DenseMatrix::from_row_major(spec.n, 1, xs)?, DenseMatrix::from_row_major(spec.n, 1, ys)?)
}

fn iris_label(raw: &str) -> Option<usize> {
    let t = raw.trim();
    if let Ok(k) = t.parse::<usize>() {
        return (k < 3).then_some(k);
    }
    if let Ok(f) = t.parse::<f64>() {
        return (f.fract() == 0.0 && (0.0..3.0).contains(&f)).then_some(f as usize);
    }
    let name = t.to_ascii_lowercase();
    let name = name.strip_prefix("iris-").unwrap_or(&name);
    match name {
        "setosa" => Some(0),
        "versicolor" => Some(1),
        "virginica" => Some(2),
        _ => None,
    }
}

/// Loads an Iris CSV: four numeric features and a class label (0/1/2 or the
/// species name) per row. A first row whose features are not all numeric is
/// treated as a header. Features are standardized per column with the
/// population standard deviation; a constant column is only centered.
pub fn load_iris(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let mut feats: Vec<[f64; 4]> = Vec::new();
    let mut labels = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        let line = idx + 1;
        let rec = rec.map_err(|e| Error::MalformedRow { path: path.into(), line, reason: e.to_string() })?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: Vec<Option<f64>> = rec.iter().take(4).map(|f| f.parse::<f64>().ok()).collect();
        if idx == 0 && parsed.iter().any(|p| p.is_none()) {
            continue;
        }
        let bad = |reason: String| Error::MalformedRow { path: path.into(), line, reason };
        if rec.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", rec.len())));
        }
        let mut row = [0.0; 4];
        for (j, p) in parsed.into_iter().enumerate() {
            row[j] = p
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("feature {} is not a finite number: '{}'", j + 1, &rec[j])))?;
        }
        let label = iris_label(&rec[4]).ok_or_else(|| bad(format!("unknown class label '{}'", &rec[4])))?;
        feats.push(row);
        labels.push(label);
    }
    if feats.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = feats.len();
    let mut x = DenseMatrix::zeros(n, 4);
    for j in 0..4 {
        let mean = feats.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = feats.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for (i, r) in feats.iter().enumerate() {
            let c = r[j] - mean;
            x.set(i, j, if sd > 0.0 { c / sd } else { c });
        }
    }
    let y = DenseMatrix::from_fn(n, 3, |i, c| if labels[i] == c { 1.0 } else { 0.0 });
    Dataset::new(x, y)
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn idx_header(bytes: &[u8], path: &Path, magic: u32, ndims: usize) -> Result<Vec<usize>> {
    let err = |reason: String| Error::Idx { path: path.into(), reason };
    let need = 4 + 4 * ndims;
    if bytes.len() < need {
        return Err(err(format!("header needs {need} bytes, file has {}", bytes.len())));
    }
    let word = |k: usize| u32::from_be_bytes([bytes[4 * k], bytes[4 * k + 1], bytes[4 * k + 2], bytes[4 * k + 3]]);
    if word(0) != magic {
        return Err(err(format!("bad magic 0x{:08x}, expected 0x{magic:08x}", word(0))));
    }
    Ok((1..=ndims).map(|k| word(k) as usize).collect())
}

/// Reads IDX image/label files and keeps the first `limit` samples in file
/// order. Pixels are scaled to `[0, 1]`, labels are one-hot over 10 classes.
pub fn load_mnist(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>, limit: usize) -> Result<Dataset> {
    if limit == 0 {
        return Err(Error::EmptyDataset);
    }
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let labels = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let idims = idx_header(&images, ip, IDX_IMAGES, 3)?;
    let ldims = idx_header(&labels, lp, IDX_LABELS, 1)?;
    let (count, rows, cols) = (idims[0], idims[1], idims[2]);
    if ldims[0] != count {
        return Err(Error::Idx { path: lp.into(), reason: format!("{} labels for {count} images", ldims[0]) });
    }
    let pixels = rows * cols;
    let n = count.min(limit);
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let ibody = &images[16..];
    let lbody = &labels[8..];
    if ibody.len() < count * pixels {
        return Err(Error::Idx { path: ip.into(), reason: format!("truncated: {} pixel bytes, expected {}", ibody.len(), count * pixels) });
    }
    if lbody.len() < count {
        return Err(Error::Idx { path: lp.into(), reason: format!("truncated: {} label bytes, expected {count}", lbody.len()) });
    }
    let x = DenseMatrix::from_fn(n, pixels, |i, j| f64::from(ibody[i * pixels + j]) / 255.0);
    let mut y = DenseMatrix::zeros(n, 10);
    for (i, &l) in lbody[..n].iter().enumerate() {
        if l > 9 {
            return Err(Error::Idx { path: lp.into(), reason: format!("label {l} at index {i} is not a digit") });
        }
        y.set(i, usize::from(l), 1.0);
    }
    Dataset::new(x, y)
}

/// Writes IDX image and label files (`u8` pixels, `rows × cols` each).
pub fn write_mnist_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    rows: usize,
    cols: usize,
    pixels: &[u8],
    labels: &[u8],
) -> Result<()> {
    if pixels.len() != labels.len() * rows * cols {
        return Err(Error::dims("IDX pixel buffer", labels.len() * rows * cols, pixels.len()));
    }
    let mut ib = Vec::with_capacity(16 + pixels.len());
    for w in [IDX_IMAGES, labels.len() as u32, rows as u32, cols as u32] {
        ib.extend_from_slice(&w.to_be_bytes());
    }
    ib.extend_from_slice(pixels);
    let mut lb = Vec::with_capacity(8 + labels.len());
    for w in [IDX_LABELS, labels.len() as u32] {
        lb.extend_from_slice(&w.to_be_bytes());
    }
    lb.extend_from_slice(labels);
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    fs::write(ip, ib).map_err(|e| Error::io(ip, e))?;
    fs::write(lp, lb).map_err(|e| Error::io(lp, e))
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckpointMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_l1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_linf: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub loss: Loss,
    pub params: NetParams,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(arch: Architecture, params: NetParams) -> Result<Self> {
        params.check(&arch)?;
        Ok(Checkpoint { arch, loss: Loss::Mse, params, meta: CheckpointMeta::default() })
    }

    /// JSON text; every float is printed with 17 significant digits.
    pub fn to_json(&self) -> Result<String> {
        let f = |v: f64| format!("{v:.16e}");
        let list = |vs: &[f64]| vs.iter().map(|v| f(*v)).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        s.push_str("{\n");
        s.push_str(&format!("  \"format_version\": {CHECKPOINT_VERSION},\n"));
        s.push_str(&format!(
            "  \"widths\": [{}],\n",
            self.arch.widths().iter().map(|w| w.to_string()).collect::<Vec<_>>().join(", ")
        ));
        s.push_str(&format!("  \"activation\": \"{}\",\n", self.arch.activation().name()));
        s.push_str(&format!("  \"loss\": \"{}\",\n", self.loss.name()));
        s.push_str("  \"layers\": [\n");
        let depth = self.params.depth();
        for (i, layer) in self.params.layers().iter().enumerate() {
            s.push_str("    {\n      \"weights\": [\n");
            let rows = layer.weights.rows();
            for r in 0..rows {
                let sep = if r + 1 < rows { "," } else { "" };
                s.push_str(&format!("        [{}]{sep}\n", list(layer.weights.row(r))));
            }
            s.push_str(&format!("      ],\n      \"bias\": [{}]\n", list(&layer.bias)));
            s.push_str(if i + 1 < depth { "    },\n" } else { "    }\n" });
        }
        s.push_str("  ],\n");
        s.push_str(&format!("  \"metadata\": {}\n}}\n", serde_json::to_string(&self.meta)?));
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::ShapeMismatch("missing integer format_version".into()))?;
        if found != u64::from(CHECKPOINT_VERSION) {
            return Err(Error::VersionMismatch { found: found.min(u64::from(u32::MAX)) as u32, expected: CHECKPOINT_VERSION });
        }
        let raw: RawCheckpoint = serde_json::from_value(value)?;
        let arch = Architecture::new(raw.widths.clone(), raw.activation)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        if raw.layers.len() != arch.depth() {
            return Err(Error::ShapeMismatch(format!("{} layers stored for depth {}", raw.layers.len(), arch.depth())));
        }
        let mut layers = Vec::with_capacity(raw.layers.len());
        for (i, rl) in raw.layers.into_iter().enumerate() {
            let l = i + 1;
            let (out_w, in_w) = (arch.width(l), arch.width(l - 1));
            if rl.weights.len() != out_w || rl.weights.iter().any(|r| r.len() != in_w) || rl.bias.len() != out_w {
                return Err(Error::ShapeMismatch(format!("layer {l} does not match widths {:?}", raw.widths)));
            }
            let weights = DenseMatrix::from_rows(&rl.weights).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            let bias = DenseVector::try_from_vec(rl.bias).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            layers.push(Layer { weights, bias });
        }
        let params = NetParams::from_layers(layers)?;
        Ok(Checkpoint { arch, loss: raw.loss, params, meta: raw.metadata })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCheckpoint {
    #[allow(dead_code)]
    format_version: u32,
    widths: Vec<usize>,
    activation: Activation,
    loss: Loss,
    layers: Vec<RawLayer>,
    #[serde(default)]
    metadata: CheckpointMeta,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)
}
