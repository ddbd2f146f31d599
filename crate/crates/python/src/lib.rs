//! Python bindings. Reports and pipeline results cross the boundary as JSON
//! strings; `json.loads` them on the Python side.

use pyo3::exceptions::{PyIOError, PyOverflowError, PyValueError};
use pyo3::prelude::*;

use conftorus::cli::{run_suite, Suite};
use conftorus::distances::{self, SamplingPlan};
use conftorus::estimates;
use conftorus::grid;
use conftorus::mask::BallFamily;
use conftorus::sequences::{self, SequenceSpec};
use conftorus::{conformal, io, Error, HypothesisBudget};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Format(_) | Error::Json(_) => PyIOError::new_err(e.to_string()),
        Error::Overflow { .. } => PyOverflowError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| err(e.into()))
}

#[pyclass(name = "GridSpec", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGridSpec(grid::GridSpec);

#[pymethods]
impl PyGridSpec {
    #[new]
    fn new(res: Vec<usize>) -> PyResult<Self> {
        grid::GridSpec::new(res).map(Self).map_err(err)
    }

    #[staticmethod]
    fn cubic(dim: usize, n: usize) -> PyResult<Self> {
        grid::GridSpec::cubic(dim, n).map(Self).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn res(&self) -> Vec<usize> {
        self.0.res().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn coords(&self, idx: usize) -> PyResult<Vec<f64>> {
        if idx >= self.0.len() {
            return Err(PyValueError::new_err("node index out of range"));
        }
        Ok(self.0.coords(idx))
    }

    fn __repr__(&self) -> String {
        format!("GridSpec({:?})", self.0.res())
    }
}

#[pyclass(name = "FlatMetric", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyFlatMetric(grid::FlatMetric);

#[pymethods]
impl PyFlatMetric {
    /// Row-major `dim × dim` entries.
    #[new]
    fn new(dim: usize, entries: Vec<f64>) -> PyResult<Self> {
        grid::FlatMetric::new(dim, entries).map(Self).map_err(err)
    }

    #[staticmethod]
    fn identity(dim: usize) -> Self {
        Self(grid::FlatMetric::identity(dim))
    }

    #[getter]
    fn entries(&self) -> Vec<f64> {
        self.0.entries().to_vec()
    }

    fn torus_volume(&self) -> f64 {
        self.0.torus_volume()
    }

    fn first_laplace_eigenvalue(&self) -> f64 {
        self.0.first_laplace_eigenvalue()
    }
}

#[pyclass(name = "ConformalMetric", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyConformalMetric(conformal::ConformalMetric);

#[pymethods]
impl PyConformalMetric {
    /// `e^{2f} g_0` with `f` given row-major on `grid`.
    #[new]
    fn new(background: &PyFlatMetric, grid: &PyGridSpec, f: Vec<f64>) -> PyResult<Self> {
        let f = grid::ScalarField::new(grid.0.clone(), f).map_err(err)?;
        conformal::ConformalMetric::new(background.0.clone(), f).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        io::read_conformal(path.as_ref()).map(Self).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::write_conformal(path.as_ref(), &self.0).map_err(err)
    }

    #[getter]
    fn grid(&self) -> PyGridSpec {
        PyGridSpec(self.0.exponent().spec().clone())
    }

    #[getter]
    fn background(&self) -> PyFlatMetric {
        PyFlatMetric(self.0.background().clone())
    }

    #[getter]
    fn exponent(&self) -> Vec<f64> {
        self.0.exponent().values().to_vec()
    }

    fn scalar_curvature(&self) -> PyResult<Vec<f64>> {
        conformal::scalar_curvature(&self.0).map(|r| r.into_values()).map_err(err)
    }

    fn volume(&self) -> PyResult<f64> {
        conformal::volume(&self.0).map_err(err)
    }

    fn weighted_average(&self, exponent: f64) -> PyResult<f64> {
        conformal::weighted_average(&self.0, exponent).map_err(err)
    }

    fn geodesic_distance(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        distances::geodesic_distance(&self.0, &x, &y)
            .map(|g| g.distance)
            .map_err(err)
    }

    /// Exact graph diameter, or a farthest-point lower bound from `sources` sources.
    #[pyo3(signature = (sources = None))]
    fn diameter(&self, sources: Option<usize>) -> PyResult<f64> {
        let plan = match sources {
            None => SamplingPlan::Exact,
            Some(k) => SamplingPlan::FarthestPoint { k },
        };
        distances::diameter(&self.0, plan).map(|d| d.value).map_err(err)
    }

    /// JSON list of check reports for one suite at index `j`.
    #[pyo3(signature = (j, suite = "all", radius = 1.0))]
    fn check(&self, py: Python<'_>, j: u64, suite: &str, radius: f64) -> PyResult<String> {
        let suite = Suite::from_name(suite).ok_or_else(|| PyValueError::new_err(format!("unknown suite {suite}")))?;
        let budget = HypothesisBudget::new(j, self.0.dim());
        let m = self.0.clone();
        let reports = py
            .detach(move || run_suite(&m, &budget, suite, radius, &BallFamily::default()))
            .map_err(err)?;
        json(&reports)
    }
}

/// Member `j` of the sequence described by a TOML spec.
#[pyfunction]
fn generate(py: Python<'_>, spec_toml: &str, j: u64) -> PyResult<PyConformalMetric> {
    let spec = SequenceSpec::from_toml(spec_toml).map_err(err)?;
    py.detach(move || sequences::generate(&spec, j))
        .map(|g| PyConformalMetric(g.metric))
        .map_err(err)
}

/// Full pipeline report as JSON.
#[pyfunction]
fn run_pipeline(py: Python<'_>, spec_toml: &str) -> PyResult<String> {
    let spec = SequenceSpec::from_toml(spec_toml).map_err(err)?;
    let report = py.detach(move || sequences::run_pipeline(&spec)).map_err(err)?;
    json(&report)
}

#[pyfunction]
fn convergence_consistency(py: Python<'_>, spec_toml: &str) -> PyResult<String> {
    let spec = SequenceSpec::from_toml(spec_toml).map_err(err)?;
    let report = py.detach(move || sequences::convergence_consistency(&spec)).map_err(err)?;
    json(&report)
}

/// Negative-scalar obstruction report as JSON.
#[pyfunction]
fn negative_scalar_obstruction(vol0: f64, v0: f64, j: u64, n: usize) -> PyResult<String> {
    let mut b = HypothesisBudget::new(j, n);
    b.v0 = v0;
    json(&estimates::negative_scalar_obstruction(vol0, &b, n).map_err(err)?)
}

#[pyfunction]
fn flat_distance_bound(d: f64, v: f64, vj: f64, delta: f64) -> PyResult<f64> {
    distances::flat_distance_bound(d, v, vj, delta).map_err(err)
}

#[pymodule]
fn conftorus_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGridSpec>()?;
    m.add_class::<PyFlatMetric>()?;
    m.add_class::<PyConformalMetric>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(convergence_consistency, m)?)?;
    m.add_function(wrap_pyfunction!(negative_scalar_obstruction, m)?)?;
    m.add_function(wrap_pyfunction!(flat_distance_bound, m)?)?;
    Ok(())
}
