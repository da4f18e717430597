//! Full-batch training, seeded initialization, trajectory recording and
//! empirical critical-point detection.

use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{self, Architecture, Dataset, Loss, NetParams};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Default gradient threshold for an empirical critical point.
pub const DEFAULT_CRITICAL_THRESHOLD: f64 = 1e-10;
/// Default number of recorded points per detection window.
pub const DEFAULT_CRITICAL_WINDOW: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// `θ ← θ − lr·∇R_S(θ)`.
    #[default]
    Gd,
    /// Adam with bias correction, `β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`.
    Adam,
}

impl FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gd" | "sgd" => Ok(Optimizer::Gd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(Error::InvalidArgument(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradMetric {
    #[default]
    L1,
    Linf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub init_variance: f64,
    pub seed: u64,
    /// Epoch stride between records; the final epoch is always recorded.
    pub record_every: usize,
    /// Norm used for early stopping and the summary's "min grad".
    pub grad_metric: GradMetric,
    /// Keep a parameter snapshot with every record.
    pub keep_snapshots: bool,
    /// Stop as soon as the gradient norm (in `grad_metric`) is at or below this.
    pub stop_grad_below: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Gd,
            learning_rate: 0.005,
            epochs: 300_000,
            init_variance: 1.0,
            seed: 0,
            record_every: 100,
            grad_metric: GradMetric::L1,
            keep_snapshots: true,
            stop_grad_below: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(self.init_variance > 0.0) || !self.init_variance.is_finite() {
            return Err(Error::InvalidArgument(format!("init_variance must be > 0, got {}", self.init_variance)));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidArgument("record_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// I.i.d. `N(0, variance)` entries drawn in vectorized-layout order from a
/// ChaCha8 stream seeded with `seed`.
pub fn init_params(arch: &Architecture, variance: f64, seed: u64) -> Result<NetParams> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::InvalidArgument(format!("init variance must be > 0, got {variance}")));
    }
    let normal = Normal::new(0.0, variance.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..arch.param_count()).map(|_| normal.sample(&mut rng)).collect();
    NetParams::devectorize(&v, arch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub epoch: usize,
    pub loss: f64,
    pub grad_l1: f64,
    pub grad_linf: f64,
    #[serde(skip)]
    pub params: Option<NetParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<Record>,
    /// Parameters after the last executed epoch.
    pub final_params: NetParams,
    /// Record with the smallest gradient norm, with its parameters.
    pub best: (Record, NetParams),
}

impl Trajectory {
    pub fn epochs(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.epoch).collect()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn last(&self) -> &Record {
        self.records.last().expect("trajectory has at least one record")
    }

    pub fn min_grad_l1(&self) -> f64 {
        self.records.iter().map(|r| r.grad_l1).fold(f64::INFINITY, f64::min)
    }

    /// One JSON object per record: `{"epoch","loss","grad_l1","grad_linf"}`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            let line = serde_json::to_string(r).map_err(std::io::Error::other)?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

fn metric(cfg: &TrainConfig, l1: f64, linf: f64) -> f64 {
    match cfg.grad_metric {
        GradMetric::L1 => l1,
        GradMetric::Linf => linf,
    }
}

/// Full-batch training from `init`.
///
/// At every epoch `t` the risk and gradient at `θ_t` are evaluated, recorded
/// when `t` is a multiple of `record_every` (or the run ends), and then the
/// optimizer step produces `θ_{t+1}`. The final record is at epoch `epochs`
/// unless early stopping kicks in.
pub fn train(init: &NetParams, arch: &Architecture, data: &Dataset, loss: Loss, config: &TrainConfig) -> Result<Trajectory> {
    config.validate()?;
    init.check(arch)?;
    let mut theta = init.vectorize().into_inner();
    let mut params = init.clone();
    let m = theta.len();
    let (mut m1, mut m2) = match config.optimizer {
        Optimizer::Adam => (vec![0.0; m], vec![0.0; m]),
        Optimizer::Gd => (Vec::new(), Vec::new()),
    };
    let mut records = Vec::new();
    let mut best: Option<(Record, NetParams)> = None;
    for epoch in 0..=config.epochs {
        let (r, grad) = network::risk_and_gradient(&params, arch, data, loss)?;
        if !r.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let g = grad.vectorize();
        let g1 = g.norm_l1();
        let ginf = g.norm_linf();
        let stop = config.stop_grad_below.is_some_and(|t| metric(config, g1, ginf) <= t);
        let last = epoch == config.epochs || stop;
        if epoch % config.record_every == 0 || last {
            let rec = Record {
                epoch,
                loss: r,
                grad_l1: g1,
                grad_linf: ginf,
                params: config.keep_snapshots.then(|| params.clone()),
            };
            let better = best
                .as_ref()
                .is_none_or(|(b, _)| metric(config, rec.grad_l1, rec.grad_linf) < metric(config, b.grad_l1, b.grad_linf));
            if better {
                best = Some((Record { params: None, ..rec.clone() }, params.clone()));
            }
            records.push(rec);
        }
        if last {
            break;
        }
        let lr = config.learning_rate;
        match config.optimizer {
            Optimizer::Gd => {
                for (t, gk) in theta.iter_mut().zip(g.iter()) {
                    *t -= lr * gk;
                }
            }
            Optimizer::Adam => {
                let step = (epoch + 1) as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(step);
                let c2 = 1.0 - ADAM_BETA2.powi(step);
                for k in 0..m {
                    let gk = g[k];
                    m1[k] = ADAM_BETA1 * m1[k] + (1.0 - ADAM_BETA1) * gk;
                    m2[k] = ADAM_BETA2 * m2[k] + (1.0 - ADAM_BETA2) * gk * gk;
                    let mhat = m1[k] / c1;
                    let vhat = m2[k] / c2;
                    theta[k] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                }
            }
        }
        params = NetParams::devectorize(&theta, arch)?;
    }
    let best = best.expect("at least one record");
    Ok(Trajectory {
        records,
        final_params: params,
        best,
    })
}

/// An empirical critical point picked from a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalCandidate {
    pub epoch: usize,
    pub params: NetParams,
    pub loss: f64,
    pub grad_l1: f64,
}

/// Splits the snapshotted records into windows of `window` consecutive
/// records and returns, per window, the record with the smallest gradient L1
/// norm among those strictly below `threshold` (earliest on ties).
pub fn detect_critical(traj: &Trajectory, threshold: f64, window: usize) -> Vec<CriticalCandidate> {
    let window = window.max(1);
    let snaps: Vec<&Record> = traj.records.iter().filter(|r| r.params.is_some()).collect();
    snaps
        .chunks(window)
        .filter_map(|chunk| {
            chunk
                .iter()
                .filter(|r| r.grad_l1 < threshold)
                .min_by(|a, b| a.grad_l1.total_cmp(&b.grad_l1).then(a.epoch.cmp(&b.epoch)))
                .map(|r| CriticalCandidate {
                    epoch: r.epoch,
                    params: r.params.clone().expect("filtered on snapshots"),
                    loss: r.loss,
                    grad_l1: r.grad_l1,
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Activation;
    use crate::numerics::DenseMatrix;

    fn line_data() -> Dataset {
        let x = DenseMatrix::from_fn(6, 1, |i, _| -1.0 + 0.4 * i as f64);
        let y = DenseMatrix::from_fn(6, 1, |i, _| (1.3 * x_at(i)).sin());
        Dataset::new(x, y).unwrap()
    }

    fn x_at(i: usize) -> f64 {
        -1.0 + 0.4 * i as f64
    }

    #[test]
    fn init_is_seeded_and_has_right_variance() {
        let arch = Architecture::new(vec![1, 2, 1], Activation::Tanh).unwrap();
        let a = init_params(&arch, 0.125, 3).unwrap();
        assert_eq!(a, init_params(&arch, 0.125, 3).unwrap());
        assert_ne!(a, init_params(&arch, 0.125, 4).unwrap());
        assert!(init_params(&arch, 0.0, 3).is_err());

        let big = Architecture::new(vec![100, 999, 1], Activation::Tanh).unwrap();
        assert!(big.param_count() >= 100_000);
        let v = init_params(&big, 0.125, 9).unwrap().vectorize();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        assert!((var - 0.125).abs() / 0.125 < 0.05, "sample variance {var}");
        // width 2 with variance 1/m^3
        assert_eq!(1.0 / 2f64.powi(3), 0.125);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { init_variance: -1.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { record_every: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn fixed_point_trajectory_is_constant() {
        let arch = Architecture::new(vec![1, 2, 1], Activation::Tanh).unwrap();
        let params = NetParams::zeros(&arch);
        let x = DenseMatrix::from_fn(3, 1, |i, _| i as f64);
        let data = Dataset::new(x, DenseMatrix::zeros(3, 1)).unwrap();
        let cfg = TrainConfig { epochs: 50, record_every: 10, ..TrainConfig::default() };
        let t = train(&params, &arch, &data, Loss::Mse, &cfg).unwrap();
        assert_eq!(t.epochs(), vec![0, 10, 20, 30, 40, 50]);
        assert!(t.records.iter().all(|r| r.loss == 0.0 && r.grad_l1 == 0.0));
        assert_eq!(t.final_params, params);
    }

    #[test]
    fn gd_step_is_exact() {
        let arch = Architecture::new(vec![1, 3, 1], Activation::Tanh).unwrap();
        let p0 = init_params(&arch, 0.5, 1).unwrap();
        let data = line_data();
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        let t = train(&p0, &arch, &data, Loss::Mse, &cfg).unwrap();
        let g = network::gradient(&p0, &arch, &data, Loss::Mse).unwrap();
        let expect: Vec<f64> = p0.vectorize().iter().zip(g.iter()).map(|(t, g)| t - 0.005 * g).collect();
        assert_eq!(t.final_params.vectorize().into_inner(), expect);
    }

    #[test]
    fn one_parameter_quadratic_decays_geometrically() {
        // linear 1-1-1 net with W1 = 1, b = 0 frozen by data: fit y = c·x using only
        // the output weight would couple parameters, so use the oracle on the risk
        // R(θ) = ½ (θ − 2)² realized by a single-sample linear net with zero input.
        let arch = Architecture::new(vec![1, 1, 1], Activation::Linear).unwrap();
        let p0 = NetParams::devectorize(&[0.0, 0.0, 0.0, 0.5], &arch).unwrap();
        let x = DenseMatrix::from_rows(&[vec![0.0]]).unwrap();
        let y = DenseMatrix::from_rows(&[vec![2.0]]).unwrap();
        let data = Dataset::new(x, y).unwrap();
        // with W1 = b1 = W2 = 0, only b2 has a nonzero gradient: b2 − 2
        let lr = 0.1;
        let cfg = TrainConfig { epochs: 40, learning_rate: lr, record_every: 1, ..TrainConfig::default() };
        let t = train(&p0, &arch, &data, Loss::Mse, &cfg).unwrap();
        for r in &t.records {
            let b2 = 2.0 - 1.5 * (1.0 - lr).powi(r.epoch as i32);
            let expect = 0.5 * (b2 - 2.0) * (b2 - 2.0);
            assert!((r.loss - expect).abs() <= 1e-12, "epoch {}: {} vs {}", r.epoch, r.loss, expect);
        }
    }

    #[test]
    fn recorded_loss_matches_snapshot_risk_and_is_reproducible() {
        let arch = Architecture::new(vec![1, 3, 1], Activation::Tanh).unwrap();
        let data = line_data();
        for opt in [Optimizer::Gd, Optimizer::Adam] {
            let cfg = TrainConfig { epochs: 300, record_every: 50, optimizer: opt, learning_rate: 0.01, ..TrainConfig::default() };
            let p0 = init_params(&arch, 0.125, 2).unwrap();
            let a = train(&p0, &arch, &data, Loss::Mse, &cfg).unwrap();
            let b = train(&p0, &arch, &data, Loss::Mse, &cfg).unwrap();
            assert_eq!(a, b);
            for r in &a.records {
                let snap = r.params.as_ref().unwrap();
                let again = network::risk(snap, &arch, &data, Loss::Mse).unwrap();
                assert!((again - r.loss).abs() <= 1e-15 * r.loss.abs());
            }
            assert!(a.last().loss < a.records[0].loss);
        }
    }

    #[test]
    fn early_stop_and_divergence() {
        let arch = Architecture::new(vec![1, 1, 1], Activation::Linear).unwrap();
        let p0 = NetParams::devectorize(&[0.0, 0.0, 0.0, 0.5], &arch).unwrap();
        let data = Dataset::new(DenseMatrix::from_rows(&[vec![0.0]]).unwrap(), DenseMatrix::from_rows(&[vec![2.0]]).unwrap()).unwrap();
        let cfg = TrainConfig { epochs: 10_000, learning_rate: 0.5, stop_grad_below: Some(1e-12), ..TrainConfig::default() };
        let t = train(&p0, &arch, &data, Loss::Mse, &cfg).unwrap();
        assert!(t.last().epoch < 10_000 && t.last().grad_l1 <= 1e-12);

        let cfg = TrainConfig { epochs: 5000, learning_rate: 3.0, ..TrainConfig::default() };
        assert!(matches!(train(&p0, &arch, &data, Loss::Mse, &cfg), Err(Error::Diverged { .. })));
    }

    fn synthetic_traj(grads: &[f64]) -> Trajectory {
        let arch = Architecture::new(vec![1, 1, 1], Activation::Tanh).unwrap();
        let p = NetParams::zeros(&arch);
        let records: Vec<Record> = grads
            .iter()
            .enumerate()
            .map(|(i, g)| Record { epoch: i * 10, loss: 1.0, grad_l1: *g, grad_linf: *g, params: Some(p.clone()) })
            .collect();
        Trajectory { best: (records[0].clone(), p.clone()), records, final_params: p }
    }

    #[test]
    fn detection_rules() {
        assert!(detect_critical(&synthetic_traj(&[1e-3, 1e-5, 1e-9]), 1e-10, 1000).is_empty());
        let c = detect_critical(&synthetic_traj(&[0.0; 7]), 1e-10, 1000);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].epoch, 0);
        let c = detect_critical(&synthetic_traj(&[1e-3, 1e-11, 1e-12, 1e-5, 1e-13, 1e-11]), 1e-10, 3);
        assert_eq!(c.iter().map(|c| c.epoch).collect::<Vec<_>>(), vec![20, 40]);
    }

    #[test]
    fn jsonl_log_lines() {
        let t = synthetic_traj(&[0.5, 0.25]);
        let mut buf = Vec::new();
        t.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let v: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(v["epoch"], 10);
        assert_eq!(v["grad_l1"], 0.25);
    }
}
