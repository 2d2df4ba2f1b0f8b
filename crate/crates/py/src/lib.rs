//! Python bindings: init formulas, neuron and stabilization primitives, the
//! gradient check, model construction and training.
//!
//! Structured results (reports, metrics) are returned as plain dicts.

use std::path::PathBuf;

use eisnn::checkpoint;
use eisnn::data::{load_dir, DatasetHandle};
use eisnn::diagnostics::{grad_check as run_grad_check, GradCheckOptions};
use eisnn::eicircuit::{EILayerParams, LayerShape};
use eisnn::eiinit::{self, calibrate, InitMode};
use eisnn::eiprop::{replace_zeros_per_sample, StabilizationConfig};
use eisnn::network::{InputShape, ModelSpec, Network};
use eisnn::neuron::{ExcState, LifParams};
use eisnn::tensor::Tensor;
use eisnn::train::{TrainConfig, Trainer as CoreTrainer};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

fn py_err(e: eisnn::Error) -> PyErr {
    match e {
        eisnn::Error::Config(_) | eisnn::Error::Parameter(_) | eisnn::Error::Dimension { .. } => {
            PyValueError::new_err(e.to_string())
        }
        eisnn::Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn tensor(shape: &[usize], data: Vec<f64>) -> PyResult<Tensor<f64>> {
    Tensor::new(shape, data).map_err(py_err)
}

/// Exponential rate λ of the excitatory weights for fan-in `d` and input
/// firing probability `p`.
#[pyfunction]
fn exponential_rate(d: usize, p: f64) -> f64 {
    eiinit::exponential_rate(d, p)
}

/// Inhibitory gain g_I for fan-in `d` and input firing probability `p`.
#[pyfunction]
fn inhibitory_gain(d: usize, p: f64) -> f64 {
    eiinit::inhibitory_gain(d, p)
}

/// One LIF step. Returns `(spikes, u_next)`.
#[pyfunction]
#[pyo3(signature = (u, prev_spikes, current, tau=2.0, theta=1.0))]
fn lif_step(u: Vec<f64>, prev_spikes: Vec<f64>, current: Vec<f64>, tau: f64, theta: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let n = u.len();
    let state = ExcState {
        u: tensor(&[n], u)?,
        spikes: tensor(&[prev_spikes.len()], prev_spikes)?,
        params: LifParams::new(tau, theta).map_err(py_err)?,
    };
    let (s, next) = eisnn::neuron::lif_step(&state, &tensor(&[current.len()], current)?).map_err(py_err)?;
    Ok((s.data().to_vec(), next.u.data().to_vec()))
}

/// Replaces the zeros of each row by that row's smallest positive entry,
/// or by `fallback` when the row has none.
#[pyfunction]
#[pyo3(signature = (rows, fallback=1.0))]
fn replace_zeros(rows: Vec<Vec<f64>>, fallback: f64) -> PyResult<Vec<Vec<f64>>> {
    let b = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("rows must have equal length"));
    }
    let x = tensor(&[b, n], rows.concat())?;
    let (y, _) = replace_zeros_per_sample(&x, fallback).map_err(py_err)?;
    Ok(y.data().chunks(n.max(1)).map(<[f64]>::to_vec).collect())
}

/// Initializes a dense layer for Bernoulli(`p`) inputs and measures its
/// currents on `samples` fresh draws.
#[pyfunction]
#[pyo3(signature = (d, n_e, p, samples=10_000, seed=0))]
fn bernoulli_init_stats<'py>(py: Python<'py>, d: usize, n_e: usize, p: f64, samples: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = EILayerParams::<f64>::zeros(LayerShape::Dense { d, n_e }).map_err(py_err)?;
    let mut report = eiinit::init_layer(0, &mut layer, p, &mut rng).map_err(py_err)?;
    report.stats = Some(eiinit::bernoulli_layer_stats(&layer, report.p_hat, samples, 1000, &mut rng).map_err(py_err)?);
    to_py(py, &report)
}

/// Finite-difference gradient check of a small E-I network.
#[pyfunction]
#[pyo3(signature = (seed=0, corrupt_backward=false))]
fn grad_check<'py>(py: Python<'py>, seed: u64, corrupt_backward: bool) -> PyResult<Bound<'py, PyAny>> {
    let report = run_grad_check(&GradCheckOptions {
        seed,
        corrupt_backward,
        ..GradCheckOptions::default()
    })
    .map_err(py_err)?;
    to_py(py, &report)
}

/// A 64-bit E-I network. Inputs are flat NHWC buffers.
#[pyclass(unsendable)]
struct Model {
    net: Network<f64>,
    rng: ChaCha8Rng,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (arch, height, width, channels, classes, seed=0))]
    fn new(arch: &str, height: usize, width: usize, channels: usize, classes: usize, seed: u64) -> PyResult<Self> {
        let input = InputShape { height, width, channels };
        let spec = ModelSpec::parse(arch, input, classes).map_err(py_err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::new(spec, &mut rng).map_err(py_err)?;
        Ok(Self { net, rng })
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn param_names(&self) -> Vec<String> {
        self.net.param_names()
    }

    /// Smallest value over all sign-constrained parameters.
    fn min_constrained(&self) -> f64 {
        self.net.min_constrained()
    }

    /// Selects the divisive stabilization: "adaptive" or "eps=<value>".
    fn set_stabilization(&mut self, mode: &str) -> PyResult<()> {
        self.net.stabilization = StabilizationConfig::parse(mode).map_err(py_err)?;
        Ok(())
    }

    fn param(&self, name: &str) -> PyResult<(Vec<usize>, Vec<f64>)> {
        self.net
            .params()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| (p.value.shape().to_vec(), p.value.data().to_vec()))
            .ok_or_else(|| PyValueError::new_err(format!("no parameter named {name}")))
    }

    /// Layer-by-layer initialization on a calibration batch. Returns one
    /// report per layer.
    #[pyo3(signature = (x, batch, init="ei"))]
    fn calibrate<'py>(&mut self, py: Python<'py>, x: Vec<f64>, batch: usize, init: &str) -> PyResult<Bound<'py, PyAny>> {
        let mode = InitMode::parse(init).map_err(py_err)?;
        let x = tensor(&self.net.spec.batch_shape(batch), x)?;
        let reports = calibrate(&mut self.net, &x, mode, &mut self.rng).map_err(py_err)?;
        to_py(py, &reports)
    }

    /// Readout logits, one row per sample.
    fn predict(&self, x: Vec<f64>, batch: usize) -> PyResult<Vec<Vec<f64>>> {
        let x = tensor(&self.net.spec.batch_shape(batch), x)?;
        let logits = self.net.predict(&x).map_err(py_err)?;
        Ok(logits.data().chunks(self.net.spec.classes).map(<[f64]>::to_vec).collect())
    }
}

/// Training session over a dataset directory (MNIST IDX or CIFAR-10 binary).
#[pyclass(unsendable)]
struct Trainer {
    inner: CoreTrainer<f32>,
    train: DatasetHandle,
    test: DatasetHandle,
    init_reports: String,
}

fn load_data(data_dir: &str, cfg: &TrainConfig) -> PyResult<(DatasetHandle, DatasetHandle)> {
    let (mut train, mut test) = load_dir(&PathBuf::from(data_dir)).map_err(py_err)?;
    if let Some(n) = cfg.train_subset {
        train = train.head(n);
    }
    if let Some(n) = cfg.test_subset {
        test = test.head(n);
    }
    Ok((train, test))
}

#[pymethods]
impl Trainer {
    /// `config` is a dict of training options using the same keys as the
    /// `[train]` table of a run config.
    #[new]
    #[pyo3(signature = (arch, data_dir, config=None))]
    fn new(py: Python<'_>, arch: &str, data_dir: &str, config: Option<Bound<'_, PyAny>>) -> PyResult<Self> {
        let cfg: TrainConfig = match config {
            Some(c) => {
                let text: String = py.import("json")?.call_method1("dumps", (c,))?.extract()?;
                serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?
            }
            None => TrainConfig::default(),
        };
        let (train, test) = load_data(data_dir, &cfg)?;
        let spec = ModelSpec::parse(arch, train.shape, train.classes).map_err(py_err)?;
        let (inner, reports) = CoreTrainer::new(spec, cfg, &train).map_err(py_err)?;
        let init_reports = serde_json::to_string(&reports).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(Self {
            inner,
            train,
            test,
            init_reports,
        })
    }

    /// Resumes from a checkpoint written by `save`.
    #[staticmethod]
    fn load(path: &str, data_dir: &str) -> PyResult<Self> {
        let inner = checkpoint::load::<f32>(&PathBuf::from(path)).map_err(py_err)?;
        let (train, test) = load_data(data_dir, &inner.cfg)?;
        Ok(Self {
            inner,
            train,
            test,
            init_reports: "[]".into(),
        })
    }

    fn init_reports<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        py.import("json")?.call_method1("loads", (self.init_reports.as_str(),))
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch
    }

    /// Runs one epoch and returns its metrics.
    fn train_epoch<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let m = self.inner.train_epoch(&self.train, Some(&self.test)).map_err(py_err)?;
        to_py(py, &m)
    }

    /// Test-set accuracy.
    fn evaluate(&self) -> PyResult<f64> {
        self.inner.evaluate(&self.test).map_err(py_err)
    }

    fn min_constrained(&self) -> f64 {
        self.inner.net.min_constrained()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::save(&PathBuf::from(path), &self.inner).map_err(py_err)
    }
}

#[pymodule]
fn eisnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(exponential_rate, m)?)?;
    m.add_function(wrap_pyfunction!(inhibitory_gain, m)?)?;
    m.add_function(wrap_pyfunction!(lif_step, m)?)?;
    m.add_function(wrap_pyfunction!(replace_zeros, m)?)?;
    m.add_function(wrap_pyfunction!(bernoulli_init_stats, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_class::<Model>()?;
    m.add_class::<Trainer>()?;
    Ok(())
}
