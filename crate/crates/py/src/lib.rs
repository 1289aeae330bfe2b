//! Python bindings for the cascade popularity model.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use casft::data::{simulate_hawkes_cascades, RetweetEvent, SplitName};
use casft::diffusion::{NoiseSchedule, ScheduleKind};
use casft::harness::{
    ablate as run_ablation, evaluate_split, init_model, prepare, prepare_from, train as run_training, CasftModel,
    Checkpoint, EpochLog, ExperimentConfig, PreparedData, Runtime, Variant,
};
use casft::nn::ParamStore;


fn py_err(e: casft::Error) -> PyErr {
    match e {
        casft::Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = casft::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

/// Mean squared log₂ error between true and predicted popularity.
#[pyfunction]
fn msle(p: Vec<f64>, p_hat: Vec<f64>) -> PyResult<f64> {
    casft::predictor::msle(&p, &p_hat).map_err(py_err)
}

/// Mean absolute percentage error on the log₂(P+2) scale.
#[pyfunction]
fn mape(p: Vec<f64>, p_hat: Vec<f64>) -> PyResult<f64> {
    casft::predictor::mape(&p, &p_hat).map_err(py_err)
}

/// Sinusoidal encoding of a timestamp into `b` dimensions.
#[pyfunction]
fn temporal_encode(t: f64, b: usize) -> PyResult<Vec<f64>> {
    casft::attention::temporal_encode(t, b).map_err(py_err)
}

/// Cumulative `ᾱ_0..ᾱ_K` of a noise schedule.
#[pyfunction]
#[pyo3(signature = (k, kind = "linear", beta_min = 1e-4, beta_max = 0.02))]
fn alpha_bars(k: usize, kind: &str, beta_min: f64, beta_max: f64) -> PyResult<Vec<f64>> {
    let kind: ScheduleKind = parse(kind)?;
    Ok(NoiseSchedule::new(k, kind, beta_min, beta_max).map_err(py_err)?.alpha_bars)
}

#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        Self { inner: ExperimentConfig::default() }
    }

    #[staticmethod]
    fn from_toml(s: &str) -> PyResult<Self> {
        Ok(Self { inner: ExperimentConfig::from_toml_str(s).map_err(py_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: ExperimentConfig::load(&path).map_err(py_err)? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    /// Overrides one dotted key, e.g. `cfg.set("train.epochs", "5")`.
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(py_err)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn __repr__(&self) -> String {
        format!("Config(hash={})", &self.inner.hash()[..12])
    }
}

#[pyclass(name = "Cascade", from_py_object)]
#[derive(Clone)]
struct PyCascade {
    inner: casft::data::Cascade,
}

#[pymethods]
impl PyCascade {
    /// `events` holds `(source, target, time)` triples; the root event is
    /// inserted at time 0 when absent.
    #[new]
    fn new(cascade_id: String, root_user: String, events: Vec<(String, String, f64)>) -> PyResult<Self> {
        let events = events.into_iter().map(|(s, t, time)| RetweetEvent::new(s, t, time)).collect();
        let (inner, _) = casft::data::Cascade::from_raw(cascade_id, root_user, events, Some(0.0)).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn cascade_id(&self) -> &str {
        &self.inner.cascade_id
    }

    #[getter]
    fn root_user(&self) -> &str {
        &self.inner.root_user
    }

    #[getter]
    fn events(&self) -> Vec<(String, String, f64)> {
        self.inner.events.iter().map(|e| (e.source.clone(), e.target.clone(), e.time)).collect()
    }

    /// Number of non-root events at or before `t_obs`.
    fn observed_size(&self, t_obs: f64) -> usize {
        self.inner.truncated(t_obs).size()
    }

    fn __len__(&self) -> usize {
        self.inner.events.len()
    }

    fn __repr__(&self) -> String {
        format!("Cascade(id={:?}, events={})", self.inner.cascade_id, self.inner.events.len())
    }
}

/// Simulates Hawkes cascades using the `[simulate]` section of `config`.
#[pyfunction]
fn simulate(config: &PyConfig) -> PyResult<Vec<PyCascade>> {
    let cs = simulate_hawkes_cascades(&config.inner.simulate).map_err(py_err)?;
    Ok(cs.into_iter().map(|inner| PyCascade { inner }).collect())
}

fn prepared(cfg: &ExperimentConfig, cascades: Option<Vec<PyCascade>>, global: Option<casft::embed::NodeEmbeddings>) -> PyResult<PreparedData> {
    match cascades {
        Some(cs) => {
            let cs: Vec<_> = cs.into_iter().map(|c| c.inner).collect();
            prepare_from(cfg, &cs, global)
        }
        None => prepare(cfg, global),
    }
    .map_err(py_err)
}

fn epoch_dict<'py>(py: Python<'py>, e: &EpochLog) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("epoch", e.epoch)?;
    d.set_item("regression", e.regression)?;
    d.set_item("generative", e.generative)?;
    d.set_item("val_msle", e.val_msle)?;
    d.set_item("val_mape", e.val_mape)?;
    d.set_item("grad_norm", e.grad_norm)?;
    Ok(d)
}

/// A trained model together with the prepared data it was trained on.
#[pyclass(name = "Model")]
struct PyModel {
    config: ExperimentConfig,
    model: CasftModel,
    params: ParamStore,
    data: PreparedData,
    history: Vec<EpochLog>,
    best_epoch: usize,
    best_val_msle: Option<f64>,
}

#[pymethods]
impl PyModel {
    /// Trains a fresh model. Without `cascades` the data come from the
    /// config's data path, or from the simulator when none is set.
    #[staticmethod]
    #[pyo3(signature = (config, cascades = None))]
    fn train(py: Python<'_>, config: &PyConfig, cascades: Option<Vec<PyCascade>>) -> PyResult<Self> {
        let cfg = config.inner.clone();
        py.detach(move || {
            let data = prepared(&cfg, cascades, None)?;
            let rt = Runtime::new(&cfg).map_err(py_err)?;
            let (model, mut params) = init_model(&cfg);
            let out = run_training(&cfg, &model, &mut params, &data, &rt).map_err(py_err)?;
            Ok(Self {
                config: cfg,
                model,
                params,
                data,
                history: out.history,
                best_epoch: out.best_epoch,
                best_val_msle: out.best_val_msle,
            })
        })
    }

    /// Loads a checkpoint and re-prepares its data with the stored global
    /// embeddings.
    #[staticmethod]
    #[pyo3(signature = (path, cascades = None))]
    fn load(path: PathBuf, cascades: Option<Vec<PyCascade>>) -> PyResult<Self> {
        let ck = Checkpoint::load(&path, None).map_err(py_err)?;
        let data = prepared(&ck.config, cascades, Some(ck.global.clone()))?;
        Ok(Self {
            config: ck.config,
            model: ck.model,
            params: ck.params,
            data,
            history: Vec::new(),
            best_epoch: ck.epoch,
            best_val_msle: ck.val_msle,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint::new(&self.config, &self.model, &self.params, &self.data.normalizer, &self.data.global, self.best_epoch, self.best_val_msle)
            .save(&path)
            .map_err(py_err)
    }

    /// Returns `{"msle", "mape", "count"}` on one split.
    #[pyo3(signature = (split = "test"))]
    fn evaluate<'py>(&self, py: Python<'py>, split: &str) -> PyResult<Bound<'py, PyDict>> {
        let split: SplitName = parse(split)?;
        let rt = Runtime::new(&self.config).map_err(py_err)?;
        let (report, _) = evaluate_split(&self.model, &self.params, &self.data, split, &rt, &self.config.hash()).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("msle", report.msle)?;
        d.set_item("mape", report.mape)?;
        d.set_item("count", report.count)?;
        Ok(d)
    }

    /// `(cascade_id, P, P_hat)` for every sample of one split.
    #[pyo3(signature = (split = "test"))]
    fn predict(&self, split: &str) -> PyResult<Vec<(String, f64, f64)>> {
        let split: SplitName = parse(split)?;
        let rt = Runtime::new(&self.config).map_err(py_err)?;
        let samples = self.data.part(split);
        let records = casft::harness::evaluate::predict_all(&self.model, &self.params, &self.data, samples, &rt).map_err(py_err)?;
        Ok(records.into_iter().map(|r| (r.cascade_id, r.popularity, r.predicted)).collect())
    }

    #[getter]
    fn history<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.history.iter().map(|e| epoch_dict(py, e)).collect()
    }

    #[getter]
    fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.config.model.variant.name()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.params.ids().map(|id| self.params.get(id).len()).sum()
    }

    fn split_sizes(&self) -> (usize, usize, usize) {
        (self.data.train.len(), self.data.val.len(), self.data.test.len())
    }
}

/// Trains every variant for every seed and returns one dict per run.
#[pyfunction]
#[pyo3(signature = (config, variants, seeds, cascades = None))]
fn ablate<'py>(
    py: Python<'py>,
    config: &PyConfig,
    variants: Vec<String>,
    seeds: Vec<u64>,
    cascades: Option<Vec<PyCascade>>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = config.inner.clone();
    let variants: Vec<Variant> = variants.iter().map(|v| parse(v)).collect::<PyResult<_>>()?;
    let rows = py.detach(move || {
        let data = prepared(&cfg, cascades, None)?;
        run_ablation(&cfg, &variants, &seeds, &data).map_err(py_err)
    })?;
    rows.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("seed", r.seed)?;
            d.set_item("variant", r.variant.name())?;
            d.set_item("msle", r.msle)?;
            d.set_item("mape", r.mape)?;
            d.set_item("count", r.count)?;
            d.set_item("ddim_calls", r.ddim_calls)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
pub fn casft_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(msle, m)?)?;
    m.add_function(wrap_pyfunction!(mape, m)?)?;
    m.add_function(wrap_pyfunction!(temporal_encode, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_bars, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(ablate, m)?)?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyCascade>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
