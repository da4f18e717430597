//! Python module `pycritembed`: networks, datasets, embeddings and analysis
//! from the `critembed` crate. Neuron indices are 0-based, layers 1-based.

use critembed::analysis::{self, NeuronGroup};
use critembed::data_io::{self, Checkpoint, SyntheticSpec};
use critembed::embedding::{self, EmbeddingPlan};
use critembed::network::{self, HessianMethod, HessianOptions};
use critembed::training::{self, Optimizer, TrainConfig};
use critembed::{Activation, Architecture, DenseMatrix, Loss, NetParams};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: critembed::Error) -> PyErr {
    match e {
        critembed::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for critembed::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

fn rows(m: &DenseMatrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// A training set: one row per sample.
#[pyclass(module = "pycritembed", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Dataset {
    inner: critembed::Dataset,
}

#[pymethods]
impl Dataset {
    #[new]
    fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> PyResult<Self> {
        let x = DenseMatrix::from_rows(&inputs).py()?;
        let y = DenseMatrix::from_rows(&targets).py()?;
        Ok(Dataset { inner: critembed::Dataset::new(x, y).py()? })
    }

    /// The shared 1-D regression task with `n` equispaced samples on [-3, 3].
    #[staticmethod]
    fn desk(n: usize) -> PyResult<Self> {
        Ok(Dataset { inner: data_io::gen_synthetic(&SyntheticSpec::desk(n)).py()? })
    }

    #[staticmethod]
    fn iris(path: &str) -> PyResult<Self> {
        Ok(Dataset { inner: data_io::load_iris(path).py()? })
    }

    #[staticmethod]
    #[pyo3(signature = (images, labels, limit = usize::MAX))]
    fn mnist(images: &str, labels: &str, limit: usize) -> PyResult<Self> {
        Ok(Dataset { inner: data_io::load_mnist(images, labels, limit).py()? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn inputs(&self) -> Vec<Vec<f64>> {
        rows(self.inner.inputs())
    }

    fn targets(&self) -> Vec<Vec<f64>> {
        rows(self.inner.targets())
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, in={}, out={})", self.inner.len(), self.inner.input_dim(), self.inner.output_dim())
    }
}

/// A fully-connected network with its parameters. Immutable: every
/// transform returns a new object.
#[pyclass(module = "pycritembed", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Network {
    arch: Architecture,
    params: NetParams,
    loss: Loss,
}

impl Network {
    fn with(&self, params: NetParams, arch: Architecture) -> Network {
        Network { arch, params, loss: self.loss }
    }
}

#[pymethods]
impl Network {
    /// Gaussian initialization with the given variance.
    #[new]
    #[pyo3(signature = (widths, activation = "tanh", variance = 1.0, seed = 0))]
    fn new(widths: Vec<usize>, activation: &str, variance: f64, seed: u64) -> PyResult<Self> {
        let act: Activation = activation.parse().py()?;
        let arch = Architecture::new(widths, act).py()?;
        let params = training::init_params(&arch, variance, seed).py()?;
        Ok(Network { arch, params, loss: Loss::Mse })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let c = data_io::load_checkpoint(path).py()?;
        Ok(Network { arch: c.arch, params: c.params, loss: c.loss })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let mut c = Checkpoint::new(self.arch.clone(), self.params.clone()).py()?;
        c.loss = self.loss;
        data_io::save_checkpoint(&c, path).py()
    }

    #[getter]
    fn widths(&self) -> Vec<usize> {
        self.arch.widths().to_vec()
    }

    #[getter]
    fn activation(&self) -> String {
        self.arch.activation().to_string()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    /// Flat parameter vector: per layer, weights row-major then bias.
    fn parameters(&self) -> Vec<f64> {
        self.params.vectorize().into_inner()
    }

    fn with_parameters(&self, values: Vec<f64>) -> PyResult<Self> {
        Ok(self.with(NetParams::devectorize(&values, &self.arch).py()?, self.arch.clone()))
    }

    fn weights(&self, layer: usize) -> PyResult<Vec<Vec<f64>>> {
        if layer == 0 || layer > self.arch.depth() {
            return Err(PyValueError::new_err(format!("layer must be in 1..={}", self.arch.depth())));
        }
        Ok(rows(&self.params.layer(layer).weights))
    }

    fn bias(&self, layer: usize) -> PyResult<Vec<f64>> {
        if layer == 0 || layer > self.arch.depth() {
            return Err(PyValueError::new_err(format!("layer must be in 1..={}", self.arch.depth())));
        }
        Ok(self.params.layer(layer).bias.iter().copied().collect())
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        network::predict(&self.params, &self.arch, &x).py()
    }

    fn risk(&self, data: &Dataset) -> PyResult<f64> {
        network::risk(&self.params, &self.arch, &data.inner, self.loss).py()
    }

    fn gradient(&self, data: &Dataset) -> PyResult<Vec<f64>> {
        Ok(network::gradient(&self.params, &self.arch, &data.inner, self.loss).py()?.into_inner())
    }

    #[pyo3(signature = (data, fd = false))]
    fn hessian(&self, data: &Dataset, fd: bool) -> PyResult<Vec<Vec<f64>>> {
        let opts = HessianOptions {
            method: if fd { HessianMethod::FiniteDifference } else { HessianMethod::Analytic },
            ..HessianOptions::default()
        };
        Ok(rows(&network::hessian_with(&self.params, &self.arch, &data.inner, self.loss, &opts).py()?))
    }

    /// Eigenvalues and sign counts of the Hessian at zero tolerance `tol`.
    #[pyo3(signature = (data, tol = 1e-11))]
    fn spectrum<'py>(&self, py: Python<'py>, data: &Dataset, tol: f64) -> PyResult<Bound<'py, PyDict>> {
        let r = analysis::hessian_spectrum(&self.params, &self.arch, &data.inner, self.loss, tol).py()?;
        let d = PyDict::new(py);
        d.set_item("eigenvalues", r.eigenvalues)?;
        d.set_item("n_pos", r.n_pos)?;
        d.set_item("n_neg", r.n_neg)?;
        d.set_item("n_zero", r.n_zero)?;
        d.set_item("tol", r.tol)?;
        Ok(d)
    }

    /// One-step embedding splitting `neuron` of hidden `layer`; the copy is appended.
    fn embed(&self, layer: usize, neuron: usize, alpha: f64) -> PyResult<Self> {
        let (p, a) = embedding::apply_embed(&self.params, &self.arch, layer, neuron, alpha).py()?;
        Ok(self.with(p, a))
    }

    /// Applies a plan written as `layer:neuron:alpha,...` with 1-based neurons.
    fn embed_plan(&self, plan: &str) -> PyResult<Self> {
        let plan = EmbeddingPlan::parse(plan).py()?;
        if plan.is_empty() {
            return Err(PyValueError::new_err("the embedding plan is empty"));
        }
        let (p, a) = embedding::apply_plan(&self.params, &self.arch, &plan).py()?;
        Ok(self.with(p, a))
    }

    fn permute(&self, layer: usize, perm: Vec<usize>) -> PyResult<Self> {
        let p = embedding::permute_neurons(&self.params, &self.arch, layer, &perm).py()?;
        Ok(self.with(p, self.arch.clone()))
    }

    fn scale_neuron(&self, layer: usize, neuron: usize, beta: f64) -> PyResult<Self> {
        let p = embedding::scale_neuron(&self.params, &self.arch, layer, neuron, beta).py()?;
        Ok(self.with(p, self.arch.clone()))
    }

    /// Full-batch training. Returns the final network and the recorded losses.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (data, learning_rate, epochs, optimizer = "gd", record_every = 100, stop_grad_below = None))]
    fn train(
        &self,
        py: Python<'_>,
        data: &Dataset,
        learning_rate: f64,
        epochs: usize,
        optimizer: &str,
        record_every: usize,
        stop_grad_below: Option<f64>,
    ) -> PyResult<(Self, Vec<f64>)> {
        let optimizer: Optimizer = optimizer.parse().py()?;
        let cfg = TrainConfig {
            optimizer,
            learning_rate,
            epochs,
            record_every,
            keep_snapshots: false,
            stop_grad_below,
            ..TrainConfig::default()
        };
        let traj = py
            .detach(|| training::train(&self.params, &self.arch, &data.inner, self.loss, &cfg))
            .py()?;
        let losses = traj.losses();
        Ok((self.with(traj.final_params, self.arch.clone()), losses))
    }

    fn similarity(&self, layer: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&analysis::similarity_matrix(&self.params, &self.arch, layer).py()?))
    }

    /// Groups neurons of `layer` and merges each group; returns the reduced
    /// network and the member lists.
    #[pyo3(signature = (layer, sim_threshold = 0.9, amp_threshold_rel = 0.01))]
    fn reduce(&self, layer: usize, sim_threshold: f64, amp_threshold_rel: f64) -> PyResult<(Self, Vec<Vec<usize>>)> {
        let groups: Vec<NeuronGroup> =
            analysis::group_neurons(&self.params, &self.arch, layer, sim_threshold, amp_threshold_rel).py()?;
        let (p, a) = analysis::reduce_network(&self.params, &self.arch, layer, &groups).py()?;
        Ok((self.with(p, a), groups.into_iter().map(|g| g.members).collect()))
    }

    /// Fraction of samples where both networks pick the same arg-max output.
    fn agreement(&self, other: &Network, data: &Dataset) -> PyResult<f64> {
        let a = analysis::prediction_agreement(&self.params, &self.arch, &other.params, &other.arch, &data.inner).py()?;
        Ok(a.fraction)
    }

    fn __repr__(&self) -> String {
        format!("Network({})", self.arch)
    }
}

#[pymodule]
fn pycritembed(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Network>()?;
    m.add_class::<Dataset>()?;
    Ok(())
}
