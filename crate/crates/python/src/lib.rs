//! Python bindings: quality fields, the GP, the SPAR model, acquisition
//! functions, single planning sessions and Monte-Carlo experiments.
//!
//! Points are passed as `(x, y)` tuples of floats.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sparbo_core::planner::run_session_with_model;
use sparbo_core::{
    AcquisitionSpec, BestScope, CombineRule, Error, ExperimentConfig, FieldFile, GpState,
    KernelParams, LatentParams, ModelConfig, Peak, Point2, PriorMode, QualityField,
    SessionConfig, SimulatedOracle, SparModel,
};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter(_)
        | Error::DegenerateCandidates(_)
        | Error::LengthMismatch { .. }
        | Error::Config(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn pt(p: (f64, f64)) -> Point2 {
    Point2::new(p.0, p.1)
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>()
        .map_err(|e| PyValueError::new_err(format!("invalid {what} '{s}': {e}")))
}

/// Sum or maximum of decaying-exponential peaks, clamped to [0, 1].
#[pyclass(name = "QualityField", module = "sparbo")]
struct PyField {
    inner: QualityField,
}

#[pymethods]
impl PyField {
    /// `peaks` is a list of `(cx, cy, amplitude, decay_length)`.
    #[new]
    #[pyo3(signature = (peaks, combine_rule = "pointwise-max"))]
    fn new(peaks: Vec<(f64, f64, f64, f64)>, combine_rule: &str) -> PyResult<Self> {
        let rule = match combine_rule {
            "pointwise-max" => CombineRule::PointwiseMax,
            "clipped-sum" => CombineRule::ClippedSum,
            other => return Err(PyValueError::new_err(format!("unknown combine rule '{other}'"))),
        };
        let peaks = peaks
            .into_iter()
            .map(|(x, y, a, d)| Peak::new(Point2::new(x, y), a, d))
            .collect::<Result<Vec<_>, _>>()
            .map_err(to_py)?;
        Ok(Self {
            inner: QualityField::new(peaks, rule),
        })
    }

    /// Load the field part of a JSON field definition file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let file = FieldFile::load(path).map_err(to_py)?;
        Ok(Self {
            inner: file.field().map_err(to_py)?,
        })
    }

    fn eval(&self, p: (f64, f64)) -> f64 {
        self.inner.eval(pt(p))
    }

    /// Copy with every peak moved by `(t_x, t_y)` and amplitudes scaled by `c`.
    fn transformed(&self, t_x: f64, t_y: f64, c: f64) -> Self {
        Self {
            inner: self.inner.transformed(&LatentParams::new(t_x, t_y, c)),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.peaks.len()
    }
}

/// Zero-mean GP with a squared-exponential kernel.
#[pyclass(name = "GaussianProcess", module = "sparbo")]
struct PyGp {
    inner: GpState,
}

#[pymethods]
impl PyGp {
    #[new]
    #[pyo3(signature = (length_scale = 0.02, signal_variance = 1.0, noise_variance = 0.0417))]
    fn new(length_scale: f64, signal_variance: f64, noise_variance: f64) -> PyResult<Self> {
        let params = KernelParams {
            length_scale,
            signal_variance,
            noise_variance,
        };
        Ok(Self {
            inner: GpState::new(params).map_err(to_py)?,
        })
    }

    /// Replace the data and refit.
    fn fit(&mut self, xs: Vec<(f64, f64)>, ys: Vec<f64>) -> PyResult<()> {
        self.inner
            .reset_observations(xs.into_iter().map(pt).collect(), ys)
            .map_err(to_py)?;
        self.inner.fit().map_err(to_py)
    }

    /// Posterior mean and variance at `p`.
    fn posterior(&self, p: (f64, f64)) -> PyResult<(f64, f64)> {
        self.inner.posterior(pt(p)).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn model_config(
    length_scale: f64,
    noise_variance: f64,
    likelihood_sigma: Option<f64>,
    recompute_residuals: bool,
) -> ModelConfig {
    let mut config = ModelConfig::default();
    config.kernel.length_scale = length_scale;
    config.kernel.noise_variance = noise_variance;
    config.likelihood_sigma = likelihood_sigma;
    config.recompute_residuals = recompute_residuals;
    config
}

/// Reference map scaled and shifted by MAP-estimated theta, plus a GP over
/// the residuals.
#[pyclass(name = "SparModel", module = "sparbo")]
struct PySpar {
    inner: SparModel,
}

#[pymethods]
impl PySpar {
    #[new]
    #[pyo3(signature = (
        reference,
        prior_mode = "spar",
        length_scale = 0.02,
        noise_variance = 0.0417,
        likelihood_sigma = None,
        recompute_residuals = true,
    ))]
    fn new(
        reference: &PyField,
        prior_mode: &str,
        length_scale: f64,
        noise_variance: f64,
        likelihood_sigma: Option<f64>,
        recompute_residuals: bool,
    ) -> PyResult<Self> {
        let mode: PriorMode = parse(prior_mode, "prior mode")?;
        let config = model_config(length_scale, noise_variance, likelihood_sigma, recompute_residuals);
        Ok(Self {
            inner: SparModel::new(reference.inner.clone(), &config, mode).map_err(to_py)?,
        })
    }

    fn update(&mut self, p: (f64, f64), quality: f64) -> PyResult<()> {
        self.inner.update(pt(p), quality).map_err(to_py)
    }

    /// Posterior mean and standard deviation at `p`.
    fn predict(&self, p: (f64, f64)) -> (f64, f64) {
        self.inner.predict(pt(p))
    }

    /// Current `(t_x, t_y, c)`.
    #[getter]
    fn theta(&self) -> (f64, f64, f64) {
        let t = self.inner.theta();
        (t.t_x, t.t_y, t.c)
    }

    fn __len__(&self) -> usize {
        self.inner.history().0.len()
    }
}

#[pyfunction]
fn expected_improvement(mean: f64, std: f64, best: f64) -> f64 {
    sparbo_core::expected_improvement(mean, std, best)
}

#[pyfunction]
fn ucb(mean: f64, std: f64, beta: f64) -> f64 {
    sparbo_core::ucb(mean, std, beta)
}

/// Run one planning session against a noiseless (or noisy) simulated truth.
///
/// Returns a dict with `per_region_best`, `trace`, `total_observations` and
/// the final `theta`.
#[pyfunction]
#[pyo3(signature = (
    field_path,
    truth,
    prior_mode = "spar",
    acquisition = "ei",
    n_max = 3,
    threshold = None,
    grid_step = 0.005,
    radius = None,
    noise_std = 0.0,
    seed = 0,
    ei_best_scope = "global",
))]
#[allow(clippy::too_many_arguments)]
fn run_session<'py>(
    py: Python<'py>,
    field_path: PathBuf,
    truth: &PyField,
    prior_mode: &str,
    acquisition: &str,
    n_max: usize,
    threshold: Option<f64>,
    grid_step: f64,
    radius: Option<f64>,
    noise_std: f64,
    seed: u64,
    ei_best_scope: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let file = FieldFile::load(field_path).map_err(to_py)?;
    let config = SessionConfig {
        structure: "session".into(),
        reference: file.field().map_err(to_py)?,
        regions: file.regions(grid_step, radius).map_err(to_py)?,
        n_max,
        early_term_threshold: threshold,
        acquisition: parse::<AcquisitionSpec>(acquisition, "acquisition")?,
        prior_mode: parse(prior_mode, "prior mode")?,
        model: ModelConfig::default(),
        ei_best_scope: parse::<BestScope>(ei_best_scope, "best scope")?,
    };
    let mut oracle = SimulatedOracle::new(truth.inner.clone(), noise_std, seed).map_err(to_py)?;
    let (result, model) = py
        .detach(|| run_session_with_model(&config, &mut oracle))
        .map_err(to_py)?;

    let out = PyDict::new(py);
    let best = PyDict::new(py);
    for (id, b) in &result.per_region_best {
        best.set_item(id, (b.quality, (b.location.x, b.location.y)))?;
    }
    out.set_item("per_region_best", best)?;
    let trace: Vec<Bound<'py, PyDict>> = result
        .trace
        .iter()
        .map(|o| {
            let d = PyDict::new(py);
            d.set_item("region_id", &o.region_id)?;
            d.set_item("iteration", o.iteration)?;
            d.set_item("location", (o.location.x, o.location.y))?;
            d.set_item("quality", o.quality)?;
            d.set_item("acquisition_value", o.acquisition_value)?;
            d.set_item("theta", (o.theta_after.t_x, o.theta_after.t_y, o.theta_after.c))?;
            Ok(d)
        })
        .collect::<PyResult<_>>()?;
    out.set_item("trace", trace)?;
    out.set_item("total_observations", result.total_observations)?;
    let t = model.theta();
    out.set_item("theta", (t.t_x, t.t_y, t.c))?;
    Ok(out)
}

/// Run a Monte-Carlo experiment from a JSON config and return the aggregate
/// table as CSV text.
#[pyfunction]
#[pyo3(signature = (config_path, trials = None, seed = None))]
fn run_experiment(
    py: Python<'_>,
    config_path: PathBuf,
    trials: Option<usize>,
    seed: Option<u64>,
) -> PyResult<String> {
    let mut config = ExperimentConfig::load(config_path).map_err(to_py)?;
    if let Some(t) = trials {
        config.trials = t;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    let outcome = py
        .detach(|| sparbo_core::run_experiment(&config))
        .map_err(to_py)?;
    outcome.aggregate.to_csv_string().map_err(to_py)
}

#[pymodule]
fn sparbo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyField>()?;
    m.add_class::<PyGp>()?;
    m.add_class::<PySpar>()?;
    m.add_function(wrap_pyfunction!(expected_improvement, m)?)?;
    m.add_function(wrap_pyfunction!(ucb, m)?)?;
    m.add_function(wrap_pyfunction!(run_session, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
