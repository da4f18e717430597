//! Experiment configuration: built-in profiles, TOML overlay and CLI overrides.
//!
//! Precedence, lowest first: the selected profile (`desk` unless `--profile`
//! says otherwise), then the `--config` file, then individual flags such as
//! `--seed`, `--out` and `--tol`. Tables in the file are merged key by key
//! into the profile, except `[data]`: a file `[data]` table that names a
//! `source` replaces the profile's data block wholesale.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use critembed::analysis::{DiagramOptions, DEFAULT_AMPLITUDE_REL, DEFAULT_SIMILARITY, DEFAULT_ZERO_TOL};
use critembed::data_io::{gen_synthetic, load_iris, load_mnist, SyntheticSpec};
use critembed::training::{Optimizer, TrainConfig};
use critembed::{Activation, Architecture, Dataset, Loss};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Profile {
    /// Minutes-scale settings used by CI.
    #[default]
    Desk,
    /// Long schedules: small learning rate, 3e5 epochs, 200 diagram trials (hours of CPU time).
    Paper,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataConfig {
    Synthetic(SyntheticSpec),
    Iris {
        path: PathBuf,
    },
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        limit: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_images: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_labels: Option<PathBuf>,
        #[serde(default = "default_test_limit")]
        test_limit: usize,
    },
}

fn default_test_limit() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub widths: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub loss: Loss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Eigenvalues with `|λ| ≤ zero_tol` count as zero.
    pub zero_tol: f64,
    /// A checkpoint counts as critical when its gradient L1 norm is at most this.
    pub critical_threshold: f64,
    /// Gradient L1 bound after embedding a critical checkpoint.
    pub grad_tol: f64,
    /// Relative output deviation bound for embeddings.
    pub output_tol: f64,
    /// Relative risk deviation bound for embeddings.
    pub risk_tol: f64,
    /// Random `(l, s, α)` cases checked by `verify`.
    pub verify_cases: usize,
    /// Random inputs used for output comparisons.
    pub probe_inputs: usize,
    pub alpha_range: (f64, f64),
    pub sim_threshold: f64,
    pub amp_threshold_rel: f64,
    /// Hidden layer reduced by `reduce`.
    pub reduce_layer: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            zero_tol: DEFAULT_ZERO_TOL,
            critical_threshold: 1e-10,
            grad_tol: 1e-9,
            output_tol: 1e-12,
            risk_tol: 1e-13,
            verify_cases: 100,
            probe_inputs: 100,
            alpha_range: (-3.0, 3.0),
            sim_threshold: DEFAULT_SIMILARITY,
            amp_threshold_rel: DEFAULT_AMPLITUDE_REL,
            reduce_layer: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagramConfig {
    /// Hidden widths trained from scratch.
    pub widths: Vec<usize>,
    pub trials: usize,
    /// Initial variance `1/m^init_power` for a width-`m` run.
    pub init_power: i32,
    /// Early stop for diagram runs; `[train]` supplies every other setting.
    pub stop_grad_below: Option<f64>,
    pub options: DiagramOptions,
}

impl Default for DiagramConfig {
    fn default() -> Self {
        DiagramConfig {
            widths: vec![1, 2, 3],
            trials: 20,
            init_power: 3,
            stop_grad_below: None,
            options: DiagramOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub diagram: DiagramConfig,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        let data = DataConfig::Synthetic(SyntheticSpec::desk(16));
        let model = ModelConfig { widths: vec![1, 2, 1], activation: Activation::Tanh, loss: Loss::Mse };
        match profile {
            Profile::Desk => ExperimentConfig {
                data,
                model,
                train: TrainConfig {
                    optimizer: Optimizer::Gd,
                    learning_rate: 0.3,
                    epochs: 100_000,
                    init_variance: 0.125,
                    seed: 0,
                    record_every: 100,
                    keep_snapshots: false,
                    stop_grad_below: Some(1e-13),
                    ..TrainConfig::default()
                },
                analysis: AnalysisConfig::default(),
                diagram: DiagramConfig {
                    widths: vec![1, 2, 3],
                    trials: 20,
                    init_power: 3,
                    stop_grad_below: Some(1e-11),
                    options: DiagramOptions { target_width: 3, ..DiagramOptions::default() },
                },
                out: PathBuf::from("runs/desk"),
            },
            Profile::Paper => ExperimentConfig {
                data,
                model,
                train: TrainConfig {
                    optimizer: Optimizer::Gd,
                    learning_rate: 0.005,
                    epochs: 300_000,
                    init_variance: 0.125,
                    seed: 0,
                    record_every: 100,
                    keep_snapshots: false,
                    stop_grad_below: None,
                    ..TrainConfig::default()
                },
                analysis: AnalysisConfig::default(),
                diagram: DiagramConfig {
                    widths: vec![1, 2, 3],
                    trials: 200,
                    init_power: 3,
                    stop_grad_below: None,
                    options: DiagramOptions { target_width: 3, ..DiagramOptions::default() },
                },
                out: PathBuf::from("runs/paper"),
            },
        }
    }

    /// Profile defaults overlaid with the optional TOML file.
    pub fn load(profile: Profile, file: Option<&Path>) -> Result<Self> {
        let base = ExperimentConfig::profile(profile);
        let Some(path) = file else {
            base.validate()?;
            return Ok(base);
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg = Self::overlay(base, &text).with_context(|| format!("in config {}", path.display()))?;
        // Relative data paths are taken relative to the config file.
        let cfg = cfg.rebase(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn overlay(base: ExperimentConfig, text: &str) -> Result<Self> {
        let file: toml::Table = text.parse().context("parsing TOML")?;
        let mut merged = toml::Table::try_from(&base).context("serializing profile")?;
        merge_tables(&mut merged, file);
        let cfg: ExperimentConfig = toml::Value::Table(merged).try_into().context("invalid configuration")?;
        Ok(cfg)
    }

    fn rebase(mut self, dir: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        match &mut self.data {
            DataConfig::Synthetic(_) => {}
            DataConfig::Iris { path } => fix(path),
            DataConfig::Mnist { images, labels, test_images, test_labels, .. } => {
                fix(images);
                fix(labels);
                if let Some(p) = test_images {
                    fix(p);
                }
                if let Some(p) = test_labels {
                    fix(p);
                }
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.architecture()?;
        if let DataConfig::Synthetic(spec) = &self.data {
            spec.validate()?;
            if self.model.widths.first() != Some(&1) || self.model.widths.last() != Some(&1) {
                bail!("synthetic data is 1-D in and out, but model widths are {:?}", self.model.widths);
            }
        }
        let a = &self.analysis;
        for (name, v) in [
            ("zero_tol", a.zero_tol),
            ("critical_threshold", a.critical_threshold),
            ("grad_tol", a.grad_tol),
            ("output_tol", a.output_tol),
            ("risk_tol", a.risk_tol),
        ] {
            if !v.is_finite() || v < 0.0 {
                bail!("analysis.{name} must be a finite non-negative number, got {v}");
            }
        }
        if a.alpha_range.0.partial_cmp(&a.alpha_range.1).is_none_or(|o| o.is_gt()) {
            bail!("analysis.alpha_range must be ordered, got {:?}", a.alpha_range);
        }
        if !(-1.0..=1.0).contains(&a.sim_threshold) {
            bail!("analysis.sim_threshold must lie in [-1, 1], got {}", a.sim_threshold);
        }
        if self.diagram.widths.is_empty() || self.diagram.widths.contains(&0) {
            bail!("diagram.widths must be non-empty and positive");
        }
        Ok(())
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Ok(Architecture::new(self.model.widths.clone(), self.model.activation)?)
    }

    pub fn load_data(&self) -> Result<Dataset> {
        Ok(match &self.data {
            DataConfig::Synthetic(spec) => gen_synthetic(spec)?,
            DataConfig::Iris { path } => load_iris(path)?,
            DataConfig::Mnist { images, labels, limit, .. } => load_mnist(images, labels, *limit)?,
        })
    }

    /// Held-out data when the source has it (MNIST test files), otherwise `None`.
    pub fn load_test_data(&self) -> Result<Option<Dataset>> {
        match &self.data {
            DataConfig::Mnist { test_images: Some(i), test_labels: Some(l), test_limit, .. } => {
                Ok(Some(load_mnist(i, l, *test_limit)?))
            }
            _ => Ok(None),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}

impl FromStr for ExperimentConfig {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        let replace_data = key == "data" && value.get("source").is_some();
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !replace_data => merge_tables(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
