//! Python bindings: records, the preprocessing pipeline, GPR, xLSTM and the
//! probabilistic forecaster. Arrays cross the boundary as nested lists.

use gaitcast_core::features::{feature_vector, FEATURE_NAMES};
use gaitcast_core::forecast::{
    crps_empirical, sample_forecast, train_forecaster, ForecastConfig, Forecaster as CoreForecaster,
};
use gaitcast_core::gpr::{self, Hyperparams, KernelParams};
use gaitcast_core::ingest::{self, GaitLabel, RawRecord};
use gaitcast_core::pipeline::{run_pipeline, PipelineConfig};
use gaitcast_core::xlstm::{train, XlstmConfig, XlstmModel};
use ndarray::{Array2, Array3};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: gaitcast_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(format!("invalid config: {e}"))
}

fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn to_nested(t: &Array3<f64>) -> Vec<Vec<Vec<f64>>> {
    t.outer_iter().map(|m| to_rows(&m.to_owned())).collect()
}

fn from_rows(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged rows"));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse_config<T: serde::de::DeserializeOwned + Default>(json: Option<&str>) -> PyResult<T> {
    json.map_or_else(|| Ok(T::default()), |s| serde_json::from_str(s).map_err(json_err))
}

/// One gait trial: sEMG `[T x 9]`, joint angles and torques `[T x 8]`.
#[pyclass(name = "Record", module = "gaitcast", skip_from_py_object)]
#[derive(Clone)]
struct PyRecord {
    inner: RawRecord,
}

#[pymethods]
impl PyRecord {
    #[staticmethod]
    fn from_csv(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ingest::parse_record(std::path::Path::new(path)).map_err(err)?,
        })
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        ingest::write_record(&self.inner, std::path::Path::new(path)).map_err(err)
    }

    #[getter]
    fn semg(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.semg)
    }

    #[getter]
    fn angles(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.angles)
    }

    #[getter]
    fn torques(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.torques)
    }

    #[getter]
    fn sample_rate_hz(&self) -> f64 {
        self.inner.sample_rate_hz
    }

    fn __len__(&self) -> usize {
        self.inner.semg_len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Record(samples={}, sample_rate_hz={})",
            self.inner.semg_len(),
            self.inner.sample_rate_hz
        )
    }
}

#[pyfunction]
#[pyo3(signature = (seed, cycles, label = "DNS", sample_rate_hz = 1926.0))]
fn synth_gait(seed: u64, cycles: usize, label: &str, sample_rate_hz: f64) -> PyResult<PyRecord> {
    let label = match label.to_ascii_uppercase().as_str() {
        "DNS" => GaitLabel::DNS,
        "UPS" => GaitLabel::UPS,
        other => return Err(PyValueError::new_err(format!("unknown gait label `{other}`"))),
    };
    Ok(PyRecord {
        inner: ingest::synth_gait_labeled(label, seed, cycles, sample_rate_hz).map_err(err)?,
    })
}

/// Standardized features `[W][9][6]` and raw targets `[W][8][2]`.
#[pyfunction]
#[pyo3(signature = (record, config_json = None))]
#[allow(clippy::type_complexity)]
fn pipeline(record: &PyRecord, config_json: Option<&str>) -> PyResult<(Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>)> {
    let cfg: PipelineConfig = parse_config(config_json)?;
    let out = run_pipeline(&record.inner, &cfg).map_err(err)?;
    Ok((to_nested(&out.features.data), to_nested(&out.targets.data)))
}

/// The six window features, keyed by name.
#[pyfunction]
#[pyo3(signature = (window, sample_rate_hz = 1926.0))]
fn window_features(window: Vec<f64>, sample_rate_hz: f64) -> PyResult<Vec<(&'static str, f64)>> {
    let f = feature_vector(&window, sample_rate_hz).map_err(err)?;
    Ok(FEATURE_NAMES.iter().copied().zip(f).collect())
}

#[pyfunction]
fn crps(samples: Vec<f64>, y: f64) -> PyResult<f64> {
    crps_empirical(&samples, y).map_err(err)
}

/// Exact RBF Gaussian process for one output.
#[pyclass(name = "GprModel", module = "gaitcast")]
struct PyGpr {
    inner: gpr::GprModel,
}

#[pymethods]
impl PyGpr {
    /// Fixed hyperparameters when both `signal_variance` and `length_scale` are given,
    /// otherwise a marginal-likelihood search.
    #[staticmethod]
    #[pyo3(signature = (x, y, signal_variance = None, length_scale = None, noise_variance = 1e-6))]
    fn fit(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        signal_variance: Option<f64>,
        length_scale: Option<f64>,
        noise_variance: f64,
    ) -> PyResult<Self> {
        let x = from_rows(x)?;
        let y = ndarray::Array1::from(y);
        let hyper = match (signal_variance, length_scale) {
            (Some(s), Some(l)) => Hyperparams::Fixed(KernelParams::new(s, l, noise_variance).map_err(err)?),
            _ => Hyperparams::Optimize { noise_variance },
        };
        Ok(Self {
            inner: gpr::fit(x.view(), y.view(), hyper).map_err(err)?,
        })
    }

    /// `(mean, variance)` per query row.
    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let p = self.inner.predict(from_rows(x)?.view()).map_err(err)?;
        Ok((p.mean, p.variance))
    }

    #[getter]
    fn params(&self) -> (f64, f64, f64) {
        let p = self.inner.params;
        (p.signal_variance, p.length_scale, p.noise_variance)
    }
}

/// Stacked sLSTM/mLSTM regressor.
#[pyclass(name = "XlstmModel", module = "gaitcast")]
struct PyXlstm {
    inner: XlstmModel,
}

#[pymethods]
impl PyXlstm {
    #[new]
    #[pyo3(signature = (config_json = None))]
    fn new(config_json: Option<&str>) -> PyResult<Self> {
        let cfg: XlstmConfig = parse_config(config_json)?;
        Ok(Self {
            inner: XlstmModel::new(cfg).map_err(err)?,
        })
    }

    /// Trains on one `[T x input_dim]` / `[T x output_dim]` sequence; returns the loss curve.
    fn train(&mut self, x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        train(&mut self.inner, &[(from_rows(x)?, from_rows(y)?)]).map_err(err)
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.inner.predict_sequence(&from_rows(x)?).map_err(err)?))
    }

    fn save(&self, dir: &str) -> PyResult<()> {
        self.inner.save(std::path::Path::new(dir)).map_err(err)
    }

    #[staticmethod]
    fn load(dir: &str) -> PyResult<Self> {
        Ok(Self {
            inner: XlstmModel::load(std::path::Path::new(dir)).map_err(err)?,
        })
    }
}

/// Lag-feature Student-t forecaster.
#[pyclass(name = "Forecaster", module = "gaitcast")]
struct PyForecaster {
    inner: CoreForecaster,
    config: ForecastConfig,
}

#[pymethods]
impl PyForecaster {
    #[new]
    #[pyo3(signature = (config_json = None))]
    fn new(config_json: Option<&str>) -> PyResult<Self> {
        let config: ForecastConfig = parse_config(config_json)?;
        config.validate().map_err(err)?;
        Ok(Self {
            inner: CoreForecaster::new(&config.arch, &config.lags, config.seed).map_err(err)?,
            config,
        })
    }

    /// Returns the per-epoch validation NLL.
    #[pyo3(signature = (series, epochs = None, patience = None))]
    fn train(&mut self, series: Vec<Vec<f64>>, epochs: Option<usize>, patience: Option<usize>) -> PyResult<Vec<f64>> {
        let epochs = epochs.unwrap_or(self.config.train.epochs);
        let patience = patience.unwrap_or(self.config.train.patience);
        let r = train_forecaster(&mut self.inner, &series, &self.config, epochs, patience).map_err(err)?;
        Ok(r.val_nll)
    }

    /// Sample paths `[num_samples][horizon]` continuing `context`.
    fn sample(&self, context: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let d = sample_forecast(&self.inner, &context, &self.config).map_err(err)?;
        Ok(to_rows(&d.samples))
    }
}

#[pymodule]
fn gaitcast(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyRecord>()?;
    m.add_class::<PyGpr>()?;
    m.add_class::<PyXlstm>()?;
    m.add_class::<PyForecaster>()?;
    m.add_function(wrap_pyfunction!(synth_gait, m)?)?;
    m.add_function(wrap_pyfunction!(pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(window_features, m)?)?;
    m.add_function(wrap_pyfunction!(crps, m)?)?;
    Ok(())
}
