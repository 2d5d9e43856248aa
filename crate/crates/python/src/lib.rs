//! Python bindings: windows, connectivity tensors, fusion models, training,
//! evaluation, relevance and full runs. Structured results cross the
//! boundary as plain dicts and lists.

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use eegconn::connectivity::{
    self, extract_window, plv_from_phases, spectral_measures, Feature, NormStats, PipelineConfig, WindowTensor,
};
use eegconn::model::{self, load_model, save_model, Metrics, ModelConfig, ModelHeader, TrainConfig};
use eegconn::mvar::{fit_mvar, spectral_decomposition};
use eegconn::pipeline::{self, RunConfig, SynthDatasetConfig};
use eegconn::relevance::{self, ClassSource, RelevanceOptions, Variant};
use eegconn::signal_io::{Label, LabeledWindow};

fn err(e: eegconn::Error) -> PyErr {
    match e {
        eegconn::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        eegconn::Error::Config { .. }
        | eegconn::Error::InvalidArgument(_)
        | eegconn::Error::Shape { .. }
        | eegconn::Error::UnsupportedScheme(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let s: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&s).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn or_default<T: DeserializeOwned + Default>(obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    obj.map(from_py).transpose().map(Option::unwrap_or_default)
}

fn parse_label(s: &str) -> PyResult<Label> {
    match s {
        "seizure" => Ok(Label::Seizure),
        "non_seizure" => Ok(Label::NonSeizure),
        _ => Err(PyValueError::new_err(format!(
            "label must be 'seizure' or 'non_seizure', got {s:?}"
        ))),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// A labeled multichannel window, samples × channels.
#[pyclass(name = "Window", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyWindow {
    inner: LabeledWindow,
}

#[pymethods]
impl PyWindow {
    #[new]
    #[pyo3(signature = (samples, fs, label="non_seizure", source_id="py"))]
    fn new(samples: Vec<Vec<f64>>, fs: f64, label: &str, source_id: &str) -> PyResult<Self> {
        Ok(PyWindow {
            inner: LabeledWindow {
                samples: matrix(samples)?,
                label: parse_label(label)?,
                source_id: source_id.to_string(),
                offset_s: 0.0,
                fs,
            },
        })
    }

    #[getter]
    fn label(&self) -> &'static str {
        self.inner.label.as_str()
    }

    #[getter]
    fn fs(&self) -> f64 {
        self.inner.fs
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.samples.dim()
    }

    fn samples(&self) -> Vec<Vec<f64>> {
        self.inner.samples.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    fn __repr__(&self) -> String {
        let (w, c) = self.inner.samples.dim();
        format!(
            "Window(id={:?}, label={:?}, samples={w}, channels={c})",
            self.id(),
            self.label()
        )
    }
}

/// Feature × time step × channel × channel × band connectivity tensor.
#[pyclass(name = "Tensor", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: WindowTensor,
}

#[pymethods]
impl PyTensor {
    #[getter]
    fn shape(&self) -> (usize, usize, usize, usize, usize) {
        let [f, t, i, j, b] = self.inner.shape();
        (f, t, i, j, b)
    }

    #[getter]
    fn label(&self) -> &'static str {
        self.inner.label.as_str()
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    /// Row-major flattened values.
    fn values(&self) -> Vec<f64> {
        self.inner.values.iter().copied().collect()
    }

    fn get(&self, feature: usize, step: usize, i: usize, j: usize, band: usize) -> PyResult<f64> {
        self.inner
            .values
            .get([feature, step, i, j, band])
            .copied()
            .ok_or_else(|| PyValueError::new_err("index out of range"))
    }

    fn __repr__(&self) -> String {
        format!(
            "Tensor(id={:?}, label={:?}, shape={:?})",
            self.inner.id,
            self.label(),
            self.shape()
        )
    }
}

fn tensors(list: Vec<PyRef<'_, PyTensor>>) -> Vec<WindowTensor> {
    list.iter().map(|t| t.inner.clone()).collect()
}

fn wrap_tensors(ts: Vec<WindowTensor>) -> Vec<PyTensor> {
    ts.into_iter().map(|inner| PyTensor { inner }).collect()
}

/// Per-(feature, band) z-score statistics.
#[pyclass(name = "NormStats", frozen)]
struct PyNormStats {
    inner: NormStats,
}

#[pymethods]
impl PyNormStats {
    #[staticmethod]
    fn fit(data: Vec<PyRef<'_, PyTensor>>) -> PyResult<Self> {
        Ok(PyNormStats {
            inner: NormStats::fit(&tensors(data)).map_err(err)?,
        })
    }

    fn apply(&self, data: Vec<PyRef<'_, PyTensor>>) -> PyResult<Vec<PyTensor>> {
        Ok(wrap_tensors(self.inner.applied(&tensors(data)).map_err(err)?))
    }
}

/// Fusion classifier over connectivity tensors.
#[pyclass(name = "FusionModel", frozen)]
struct PyFusionModel {
    inner: model::FusionModel,
    norm: Option<NormStats>,
}

#[pymethods]
impl PyFusionModel {
    /// Desk-scale model for `scheme`; `config` (a dict) replaces it entirely.
    #[new]
    #[pyo3(signature = (scheme=2, channels=4, seed=0, config=None))]
    fn new(scheme: u8, channels: usize, seed: u64, config: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let cfg = match config {
            Some(c) => from_py::<ModelConfig>(c)?,
            None => ModelConfig {
                seed,
                ..ModelConfig::desk(scheme, channels)
            },
        };
        cfg.validate().map_err(err)?;
        Ok(PyFusionModel {
            inner: model::FusionModel::build(&cfg).map_err(err)?,
            norm: None,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (inner, header) = load_model(path).map_err(err)?;
        Ok(PyFusionModel {
            inner,
            norm: header.norm_stats,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let header = ModelHeader::new(&self.inner, self.norm.clone(), None);
        save_model(&self.inner, &header, path).map_err(err)
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    #[getter]
    fn n_branches(&self) -> usize {
        self.inner.n_branches()
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.config)
    }

    /// Normalization stored with a loaded model, if any.
    #[getter]
    fn norm_stats(&self) -> Option<PyNormStats> {
        self.norm.clone().map(|inner| PyNormStats { inner })
    }

    /// Seizure probability of each tensor.
    fn predict(&self, data: Vec<PyRef<'_, PyTensor>>) -> PyResult<Vec<f64>> {
        model::predict(&self.inner, &tensors(data)).map_err(err)
    }
}

#[pyfunction]
fn features() -> Vec<&'static str> {
    Feature::ALL.iter().map(|f| f.as_str()).collect()
}

#[pyfunction]
fn default_pipeline_config(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &PipelineConfig::default())
}

/// Synthetic run config writing to `out_dir`, as a dict.
#[pyfunction]
fn synthetic_run_config<'py>(py: Python<'py>, out_dir: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &RunConfig::synthetic(out_dir))
}

/// Labeled windows of the synthetic coupled-vs-uncoupled dataset.
#[pyfunction]
#[pyo3(signature = (config=None, seed=None))]
fn synth_windows(config: Option<&Bound<'_, PyAny>>, seed: Option<u64>) -> PyResult<Vec<PyWindow>> {
    let mut cfg: SynthDatasetConfig = or_default(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let windows = pipeline::synth_windows(&cfg).map_err(err)?;
    Ok(windows.into_iter().map(|inner| PyWindow { inner }).collect())
}

#[pyfunction]
#[pyo3(signature = (window, config=None))]
fn extract(window: PyRef<'_, PyWindow>, config: Option<&Bound<'_, PyAny>>) -> PyResult<PyTensor> {
    let cfg: PipelineConfig = or_default(config)?;
    let (inner, _) = extract_window(&window.inner, &cfg).map_err(err)?;
    Ok(PyTensor { inner })
}

#[pyfunction]
#[pyo3(signature = (windows, config=None))]
fn extract_all(windows: Vec<PyRef<'_, PyWindow>>, config: Option<&Bound<'_, PyAny>>) -> PyResult<Vec<PyTensor>> {
    let cfg: PipelineConfig = or_default(config)?;
    let ws: Vec<LabeledWindow> = windows.iter().map(|w| w.inner.clone()).collect();
    let (ts, _) = connectivity::extract_all(&ws, &cfg).map_err(err)?;
    Ok(wrap_tensors(ts))
}

/// Magnitudes of SM, ISM, DC, COH, PDC and PCOH of an MVAR fit to
/// `samples` (samples × channels), per grid frequency, plus `freqs`.
#[pyfunction]
#[pyo3(signature = (samples, fs, order=5, n_freqs=64, ridge=1e-4))]
fn mvar_measures(
    py: Python<'_>,
    samples: Vec<Vec<f64>>,
    fs: f64,
    order: usize,
    n_freqs: usize,
    ridge: f64,
) -> PyResult<Bound<'_, PyAny>> {
    let x = matrix(samples)?;
    let fit = fit_mvar(x.view(), order, ridge, fs).map_err(err)?;
    let sd = spectral_decomposition(&fit, n_freqs).map_err(err)?;
    let mut out = serde_json::Map::new();
    out.insert("freqs".into(), serde_json::json!(sd.freqs));
    for (feature, mats) in spectral_measures(&sd).map_err(err)? {
        let mags: Vec<Vec<Vec<f64>>> = mats
            .iter()
            .map(|m| m.row_iter().map(|r| r.iter().map(|z| z.norm()).collect()).collect())
            .collect();
        out.insert(feature.as_str().into(), serde_json::json!(mags));
    }
    to_py(py, &out)
}

#[pyfunction]
fn plv(phases_a: Vec<f64>, phases_b: Vec<f64>) -> PyResult<f64> {
    plv_from_phases(&phases_a, &phases_b).map_err(err)
}

/// Returns the trained model and the per-epoch history.
#[pyfunction]
#[pyo3(signature = (model, data, config=None))]
fn train<'py>(
    py: Python<'py>,
    model: PyRef<'_, PyFusionModel>,
    data: Vec<PyRef<'_, PyTensor>>,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<(PyFusionModel, Bound<'py, PyAny>)> {
    let cfg: TrainConfig = or_default(config)?;
    let ds = tensors(data);
    let (start, norm) = (model.inner.clone(), model.norm.clone());
    let (trained, history) = py.detach(|| model::train(&start, &ds, &cfg)).map_err(err)?;
    Ok((PyFusionModel { inner: trained, norm }, to_py(py, &history)?))
}

#[pyfunction]
#[pyo3(signature = (model, data, threshold=0.5))]
fn evaluate<'py>(
    py: Python<'py>,
    model: PyRef<'_, PyFusionModel>,
    data: Vec<PyRef<'_, PyTensor>>,
    threshold: f64,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(
        py,
        &model::evaluate(&model.inner, &tensors(data), threshold).map_err(err)?,
    )
}

#[pyfunction]
#[pyo3(name = "metrics_from_counts")]
fn metrics_from_counts(py: Python<'_>, tp: usize, fp: usize, fn_: usize, tn: usize) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &Metrics::from_counts(tp, fp, fn_, tn))
}

/// Relevance report as a dict; `variant` is "averaged" or "per_sample",
/// `class_source` is "true_label" or "predicted".
#[pyfunction]
#[pyo3(signature = (model, data, variant="averaged", class_source="true_label"))]
fn explain<'py>(
    py: Python<'py>,
    model: PyRef<'_, PyFusionModel>,
    data: Vec<PyRef<'_, PyTensor>>,
    variant: &str,
    class_source: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = RelevanceOptions {
        variant: match variant {
            "averaged" => Variant::Averaged,
            "per_sample" => Variant::PerSample,
            _ => return Err(PyValueError::new_err(format!("unknown variant {variant:?}"))),
        },
        class_source: match class_source {
            "true_label" => ClassSource::TrueLabel,
            "predicted" => ClassSource::Predicted,
            _ => return Err(PyValueError::new_err(format!("unknown class source {class_source:?}"))),
        },
    };
    let report = relevance::explain(&model.inner, &tensors(data), opts, String::new()).map_err(err)?;
    to_py(py, &report)
}

/// Runs a full config-driven pipeline and returns its manifest.
#[pyfunction]
fn run<'py>(py: Python<'py>, config: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: RunConfig = from_py(config)?;
    let manifest = py.detach(|| pipeline::pipeline_run(&cfg)).map_err(err)?;
    to_py(py, &manifest)
}

#[pymodule]
fn eegconn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyWindow>()?;
    m.add_class::<PyTensor>()?;
    m.add_class::<PyNormStats>()?;
    m.add_class::<PyFusionModel>()?;
    m.add_function(wrap_pyfunction!(features, m)?)?;
    m.add_function(wrap_pyfunction!(default_pipeline_config, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_run_config, m)?)?;
    m.add_function(wrap_pyfunction!(synth_windows, m)?)?;
    m.add_function(wrap_pyfunction!(extract, m)?)?;
    m.add_function(wrap_pyfunction!(extract_all, m)?)?;
    m.add_function(wrap_pyfunction!(mvar_measures, m)?)?;
    m.add_function(wrap_pyfunction!(plv, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_from_counts, m)?)?;
    m.add_function(wrap_pyfunction!(explain, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
