//! Python bindings. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use hfbrt_core as core;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use core::brt::{BrtHyperParams, BrtModel};
use core::config::ScenarioConfig;
use core::data::SampleGenerator;
use core::eval::{self, LsEstimator};
use core::rng::{self, Purpose};
use core::tensor::Mat;
use core::training::{self, TrainConfig, TrainOutputs};

fn err(e: core::Error) -> PyErr {
    match e {
        core::Error::Io(_) | core::Error::Format { .. } => PyIOError::new_err(e.to_string()),
        core::Error::NonFiniteLoss { .. } | core::Error::RankDeficient { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn rows(m: &Mat<f64>) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn mat(rows: Vec<Vec<f64>>) -> PyResult<Mat<f64>> {
    Mat::from_rows(&rows).map_err(err)
}

#[pyclass(name = "Scenario", module = "hfbrt", from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn baseline() -> Self {
        Self { inner: ScenarioConfig::baseline() }
    }

    #[staticmethod]
    fn wideband() -> Self {
        Self { inner: ScenarioConfig::wideband() }
    }

    #[staticmethod]
    fn toy() -> Self {
        Self { inner: ScenarioConfig::toy() }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self { inner: ScenarioConfig::from_toml(text).map_err(err)? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    /// Copy with a different subcarrier count.
    fn with_subcarriers(&self, k: usize) -> Self {
        Self { inner: ScenarioConfig { subcarriers: k, ..self.inner.clone() } }
    }

    #[getter]
    fn subcarriers(&self) -> usize {
        self.inner.subcarriers
    }

    #[getter]
    fn token_width(&self) -> usize {
        self.inner.token_width()
    }

    #[getter]
    fn observation_width(&self) -> usize {
        self.inner.observation_width()
    }

    #[getter]
    fn rayleigh_distance(&self) -> f64 {
        self.inner.rayleigh_distance()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(S={}, S̄={}, N_p={}, K={})",
            self.inner.num_subarrays, self.inner.elems_per_subarray, self.inner.n_pilots, self.inner.subcarriers
        )
    }
}

/// One generated batch. Rows are `samples × subcarriers`, sample-major.
#[pyclass(name = "Batch", module = "hfbrt", get_all)]
struct PyBatch {
    samples: usize,
    subcarriers: usize,
    y: Vec<Vec<f64>>,
    h0: Vec<Vec<f64>>,
    truth: Vec<Vec<f64>>,
    snr_db: Vec<f64>,
    near_field_paths: Vec<usize>,
}

#[pyclass(name = "Generator", module = "hfbrt")]
struct PyGenerator {
    inner: SampleGenerator,
}

#[pymethods]
impl PyGenerator {
    #[new]
    fn new(scenario: &PyScenario) -> PyResult<Self> {
        Ok(Self { inner: SampleGenerator::new(&scenario.inner).map_err(err)? })
    }

    /// `n` samples from stream `seed`; SNR drawn from the scenario range
    /// unless `snr_db` is given.
    #[pyo3(signature = (n, seed, snr_db=None))]
    fn batch(&self, n: usize, seed: u64, snr_db: Option<f64>) -> PyResult<PyBatch> {
        let mut r = rng::stream(seed, Purpose::Misc, 0, 0);
        let b = match snr_db {
            Some(s) => self.inner.batch_at(n, s, &mut r),
            None => self.inner.batch(n, &mut r),
        }
        .map_err(err)?;
        Ok(PyBatch {
            samples: b.samples,
            subcarriers: b.subcarriers,
            y: rows(&b.y),
            h0: rows(&b.h0),
            truth: rows(&b.truth),
            snr_db: b.snr_db,
            near_field_paths: b.near_field_paths,
        })
    }

    /// Linear-initializer NMSE in dB over an SNR grid.
    fn ls_sweep(&self, snr_grid: Vec<f64>, n: usize, seed: u64) -> PyResult<Vec<(f64, f64)>> {
        let t = eval::nmse_sweep(&[&LsEstimator], &self.inner, &snr_grid, n, seed, 1).map_err(err)?;
        Ok(t.curve("ls"))
    }
}

#[pyclass(name = "Model", module = "hfbrt")]
struct PyModel {
    inner: BrtModel<f64>,
    scenario: ScenarioConfig,
}

#[pymethods]
impl PyModel {
    /// Freshly initialized desk-scale model for `scenario`.
    #[staticmethod]
    #[pyo3(signature = (scenario, seed=0, iters=None))]
    fn toy(scenario: &PyScenario, seed: u64, iters: Option<usize>) -> PyResult<Self> {
        let mut hyper = BrtHyperParams::toy(scenario.inner.token_width(), scenario.inner.subcarriers);
        if let Some(t) = iters {
            hyper.iters = t;
        }
        Ok(Self { inner: BrtModel::new(hyper, seed).map_err(err)?, scenario: scenario.inner.clone() })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, header) = training::load_model(&path).map_err(err)?;
        Ok(Self { inner, scenario: header.scenario })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        training::save_model(&path, &self.inner, &self.scenario, None).map_err(err)
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    #[getter]
    fn iters(&self) -> usize {
        self.inner.hyper().iters
    }

    #[getter]
    fn scenario(&self) -> PyScenario {
        PyScenario { inner: self.scenario.clone() }
    }

    fn set_betas(&mut self, beta: f64) {
        self.inner.set_betas(beta);
    }

    /// Refined estimate `ĥ_{N_t}` of `batch` samples given `ĥ₀`.
    fn estimate(&self, h0: Vec<Vec<f64>>, batch: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.inner.estimate(&mat(h0)?, batch).map_err(err)?))
    }

    /// Every iterate `ĥ₀ … ĥ_{N_t}`.
    fn refine(&self, h0: Vec<Vec<f64>>, batch: usize) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let trace = self.inner.refine(&mat(h0)?, batch).map_err(err)?;
        Ok(trace.estimates.iter().map(rows).collect())
    }

    /// Trains on fresh samples of the model's scenario with the toy settings.
    /// Returns `(epoch, train_nmse_db, val_nmse_db, val_ls_nmse_db, lr)` rows.
    #[pyo3(signature = (epochs=30, seed=0, samples_per_epoch=None))]
    fn train(&mut self, py: Python<'_>, epochs: usize, seed: u64, samples_per_epoch: Option<usize>) -> PyResult<Vec<(usize, f64, f64, f64, f64)>> {
        let mut cfg = TrainConfig { epochs, seed, ..TrainConfig::toy() };
        if let Some(n) = samples_per_epoch {
            cfg.samples_per_epoch = n;
        }
        let gen = SampleGenerator::new(&self.scenario).map_err(err)?;
        let model = &mut self.inner;
        let report = py.detach(|| training::train(model, &gen, &cfg, &TrainOutputs::default())).map_err(err)?;
        Ok(report.epochs.iter().map(|e| (e.epoch, e.train_nmse_db, e.val_nmse_db, e.val_ls_nmse_db, e.lr)).collect())
    }
}

/// `‖h − ĥ‖² / ‖h‖²` of flat vectors.
#[pyfunction]
fn nmse(truth: Vec<f64>, estimate: Vec<f64>) -> PyResult<f64> {
    core::estimators::nmse(&truth, &estimate).map_err(err)
}

/// Exact near-field path-count PMF as `(fraction, probability)` pairs.
#[pyfunction]
fn near_field_pmf(scenario: &PyScenario) -> PyResult<Vec<(String, f64)>> {
    let pmf = eval::near_field_pmf(&scenario.inner).map_err(err)?;
    Ok(pmf.probs.iter().zip(pmf.to_f64()).map(|(p, f)| (p.to_string(), f)).collect())
}

#[pymodule]
fn hfbrt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyBatch>()?;
    m.add_class::<PyGenerator>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(nmse, m)?)?;
    m.add_function(wrap_pyfunction!(near_field_pmf, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
