//! Python bindings. Structured results cross the boundary as plain
//! dicts and lists built from the same JSON the CLI and service emit.

use std::collections::BTreeMap;

use hydrodispatch::datastore::{read_bundle, write_bundle, Store as CoreStore};
use hydrodispatch::dispatch::{self, run_dispatch, write_case, DispatchRequest, DispatchRun as CoreRun};
use hydrodispatch::efficiency;
use hydrodispatch::hydrology::{generate_synthetic_cascade, HydroScenario};
use hydrodispatch::interdependency::{analyze_pair, LagReport as CoreLagReport, PlantPair};
use hydrodispatch::ml::{plant_training_set, predict_with_threshold, train_plant, TrainConfig, TrainedPlantModel};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(hydrodispatch_py, HydroError, PyValueError, "Engine error; `code` holds the machine-readable kind.");

fn py_err(e: hydrodispatch::Error) -> PyErr {
    let err = HydroError::new_err(e.to_string());
    Python::attach(|py| {
        let _ = err.value(py).setattr("code", e.code());
    });
    err
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(py: Python<'_>, value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// SQLite-backed store of plant and unit records.
#[pyclass(unsendable, module = "hydrodispatch_py")]
struct Store {
    inner: CoreStore,
}

#[pymethods]
impl Store {
    /// Opens `path`, or an in-memory store when omitted.
    #[new]
    #[pyo3(signature = (path=None))]
    fn new(path: Option<String>) -> PyResult<Self> {
        let inner = match path {
            Some(p) => CoreStore::open(p),
            None => CoreStore::open_in_memory(),
        }
        .map_err(py_err)?;
        Ok(Store { inner })
    }

    /// Ingests a `#@` bundle and returns the row counts.
    fn ingest_bundle(&mut self, py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
        let bundle = read_bundle(text.as_bytes()).map_err(py_err)?;
        to_py(py, &self.inner.ingest_bundle(&bundle).map_err(py_err)?)
    }

    /// Ingests one CSV table; `kind` is static_plants, static_units, plants or units.
    fn ingest_csv(&mut self, kind: &str, path: &str) -> PyResult<usize> {
        let s = &mut self.inner;
        match kind {
            "static_plants" => s.ingest_static_plant_csv(path),
            "static_units" => s.ingest_static_unit_csv(path),
            "plants" => s.ingest_plant_csv(path),
            "units" => s.ingest_unit_csv(path),
            other => return Err(PyValueError::new_err(format!("unknown table kind {other:?}"))),
        }
        .map_err(py_err)
    }

    fn plants(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.plant_summaries().map_err(py_err)?)
    }

    fn plant_samples(&self, py: Python<'_>, plant: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.plant_samples(plant).map_err(py_err)?)
    }

    /// Efficiency curves of every unit of `plant`; `persist` stores their points.
    #[pyo3(signature = (plant, threshold=efficiency::DEFAULT_THRESHOLD, persist=false))]
    fn efficiency_curves(&mut self, py: Python<'_>, plant: &str, threshold: f64, persist: bool) -> PyResult<Py<PyAny>> {
        let curves = if persist {
            efficiency::refresh_plant_curves(&mut self.inner, plant, threshold)
        } else {
            efficiency::plant_curves(&self.inner, plant, threshold)
        }
        .map_err(py_err)?;
        to_py(py, &curves)
    }

    #[pyo3(signature = (upstream, downstream, max_lag=hydrodispatch::interdependency::DEFAULT_MAX_LAG))]
    fn analyze_pair(&self, upstream: &str, downstream: &str, max_lag: u32) -> PyResult<LagReport> {
        let inner = analyze_pair(&self.inner, &PlantPair::new(upstream, downstream), max_lag).map_err(py_err)?;
        Ok(LagReport { inner })
    }
}

/// Seasonal lag profiles and the fitted cascade links.
#[pyclass(frozen, module = "hydrodispatch_py")]
struct LagReport {
    inner: CoreLagReport,
}

#[pymethods]
impl LagReport {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(LagReport { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Season name to best lag in hours.
    #[getter]
    fn best_lags(&self) -> BTreeMap<String, u32> {
        self.inner.profiles.iter().map(|p| (p.season.to_string(), p.best_lag)).collect()
    }

    #[getter]
    fn profiles(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.profiles)
    }

    #[getter]
    fn links(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.links)
    }
}

/// Trained per-category commitment model of one plant.
#[pyclass(frozen, module = "hydrodispatch_py")]
struct Model {
    inner: TrainedPlantModel,
}

#[pymethods]
impl Model {
    /// Trains on the plant's history. `config` keys override the defaults.
    #[staticmethod]
    #[pyo3(signature = (store, plant, config=None, epochs=None, seed=None))]
    fn train(
        py: Python<'_>,
        store: &Store,
        plant: &str,
        config: Option<&Bound<'_, PyDict>>,
        epochs: Option<usize>,
        seed: Option<u64>,
    ) -> PyResult<Self> {
        let mut cfg: TrainConfig = match config {
            Some(c) => from_py(py, c.as_any())?,
            None => TrainConfig::default(),
        };
        cfg.epochs = epochs.unwrap_or(cfg.epochs);
        cfg.seed = seed.unwrap_or(cfg.seed);
        let (spec, rows) = plant_training_set(&store.inner, plant).map_err(py_err)?;
        let inner = py.detach(|| train_plant(&spec, &rows, &cfg)).map_err(py_err)?;
        Ok(Model { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Model { inner: TrainedPlantModel::load(path).map_err(py_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[getter]
    fn plant(&self) -> String {
        self.inner.plant.clone()
    }

    /// Human-readable training report.
    #[getter]
    fn report(&self) -> String {
        self.inner.report.to_string()
    }

    /// Per-category decisions for one hour of plant conditions.
    #[pyo3(signature = (total_mw, head_ft, storage_af, threshold=None))]
    fn predict(&self, py: Python<'_>, total_mw: f64, head_ft: f64, storage_af: f64, threshold: Option<f64>) -> PyResult<Py<PyAny>> {
        let t = threshold.unwrap_or(self.inner.config.threshold);
        to_py(py, &predict_with_threshold(&self.inner, [total_mw, head_ft, storage_af], t))
    }

    fn __repr__(&self) -> String {
        format!("Model(plant={:?}, categories={})", self.inner.plant, self.inner.categories.len())
    }
}

/// Result of one dispatch: planning-case rows plus the audit trail.
#[pyclass(frozen, module = "hydrodispatch_py")]
struct DispatchRun {
    inner: CoreRun,
}

#[pymethods]
impl DispatchRun {
    #[getter]
    fn season(&self) -> String {
        self.inner.season.to_string()
    }

    #[getter]
    fn rows(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.rows)
    }

    #[getter]
    fn plants(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.plants)
    }

    /// Planning case as CSV text.
    fn csv(&self) -> PyResult<String> {
        let mut out = Vec::new();
        write_case(&mut out, &self.inner.rows).map_err(py_err)?;
        String::from_utf8(out).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Run manifest, readable by `hydrodispatch export`.
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

/// Dispatches `plants` (default: every plant with a model) for a scenario
/// such as `"dry:summer"` or `"hist:2021-01-01T00:00:00Z..2021-02-01T00:00:00Z"`.
#[pyfunction]
#[pyo3(signature = (store, models, scenario, plants=None, links=None, threshold=None, alpha=dispatch::DEFAULT_ALPHA, seed=0, targets=None))]
#[allow(clippy::too_many_arguments)]
fn run(
    store: &Store,
    models: Vec<PyRef<'_, Model>>,
    scenario: &str,
    plants: Option<Vec<String>>,
    links: Option<PyRef<'_, LagReport>>,
    threshold: Option<f64>,
    alpha: f64,
    seed: u64,
    targets: Option<BTreeMap<String, f64>>,
) -> PyResult<DispatchRun> {
    let scenario: HydroScenario = scenario.parse().map_err(py_err)?;
    let models: BTreeMap<String, TrainedPlantModel> =
        models.iter().map(|m| (m.inner.plant.clone(), m.inner.clone())).collect();
    let plants = plants.unwrap_or_else(|| models.keys().cloned().collect());
    let mut req = DispatchRequest::new(plants, scenario);
    req.threshold = threshold;
    req.alpha = alpha;
    req.seed = seed;
    req.targets = targets.unwrap_or_default();
    let links = links.map(|l| l.inner.links.clone()).unwrap_or_default();
    let inner = run_dispatch(&store.inner, &req, &models, &links).map_err(py_err)?;
    Ok(DispatchRun { inner })
}

/// Synthetic two-plant cascade as a `#@` bundle.
#[pyfunction]
#[pyo3(signature = (seed=42, hours=2000, lag=2, noise=0.05))]
fn synthetic_bundle(seed: u64, hours: usize, lag: usize, noise: f64) -> PyResult<String> {
    let mut out = Vec::new();
    write_bundle(&mut out, &generate_synthetic_cascade(seed, hours, lag, noise).to_bundle()).map_err(py_err)?;
    String::from_utf8(out).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn compute_efficiency(power_mw: f64, flow_cfs: f64, head_ft: f64) -> PyResult<f64> {
    efficiency::compute_efficiency(power_mw, flow_cfs, head_ft).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (nominal_mw, head_ft, rated_head_ft, alpha=dispatch::DEFAULT_ALPHA))]
fn pmax_available(nominal_mw: f64, head_ft: f64, rated_head_ft: f64, alpha: f64) -> PyResult<f64> {
    dispatch::pmax_available(nominal_mw, head_ft, rated_head_ft, alpha).map_err(py_err)
}

/// Splits `cat_mw` over the `active` largest units; returns `(unit_mw, unserved_mw)`.
#[pyfunction]
fn allocate_units(cat_mw: f64, active: usize, pmax_available: Vec<f64>) -> PyResult<(Vec<f64>, f64)> {
    let a = dispatch::allocate_units(cat_mw, active, &pmax_available).map_err(py_err)?;
    Ok((a.unit_mw, a.unserved_mw))
}

#[pymodule]
fn hydrodispatch_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HydroError", m.py().get_type::<HydroError>())?;
    m.add("MW_PER_CFS_FT", efficiency::MW_PER_CFS_FT)?;
    m.add_class::<Store>()?;
    m.add_class::<LagReport>()?;
    m.add_class::<Model>()?;
    m.add_class::<DispatchRun>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_bundle, m)?)?;
    m.add_function(wrap_pyfunction!(compute_efficiency, m)?)?;
    m.add_function(wrap_pyfunction!(pmax_available, m)?)?;
    m.add_function(wrap_pyfunction!(allocate_units, m)?)?;
    Ok(())
}
