//! Python bindings: surrogate fitting and prediction, single GAD steps,
//! whole runs from config text, and the benchmark problems.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use agpr_gad::experiment::{ExperimentConfig, Mode, Overrides};
use agpr_gad::gad::{
    gad_step as step, run_agpr_gad, run_reference_gad, ExactDerivatives, GadResult, GadState,
    NoisyFiniteDifference,
};
use agpr_gad::gpr::{optimize_hyperparams, Dataset, GprModel, MleOptions, ObservationKind};
use agpr_gad::problems::{oracle_critical_points, Problem};
use agpr_gad::{Error, Matrix, Vector};

fn err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("expected a square matrix"));
    }
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn kind(name: &str) -> PyResult<ObservationKind> {
    match name {
        "energy" => Ok(ObservationKind::Energy),
        "force" => Ok(ObservationKind::Force),
        _ => Err(PyValueError::new_err(format!("kind must be energy or force, got {name:?}"))),
    }
}

fn problem(name: &str) -> PyResult<Problem> {
    Problem::by_name(name).ok_or_else(|| PyValueError::new_err(format!("unknown problem {name:?}")))
}

#[pyclass(name = "KernelParams", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyKernelParams(agpr_gad::KernelParams);

#[pymethods]
impl PyKernelParams {
    #[new]
    #[pyo3(signature = (eta, length, noise_var = 0.0))]
    fn new(eta: f64, length: f64, noise_var: f64) -> PyResult<Self> {
        agpr_gad::KernelParams::new(eta, length, noise_var).map(Self).map_err(err)
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.0.eta()
    }

    /// Squared length scale.
    #[getter]
    fn length(&self) -> f64 {
        self.0.length()
    }

    #[getter]
    fn noise_var(&self) -> f64 {
        self.0.noise_var()
    }

    fn __repr__(&self) -> String {
        format!(
            "KernelParams(eta={}, length={}, noise_var={})",
            self.0.eta(),
            self.0.length(),
            self.0.noise_var()
        )
    }
}

fn dataset(kind_name: &str, x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> PyResult<Dataset> {
    let Some(first) = x.first() else {
        return Err(PyValueError::new_err("no training points"));
    };
    if x.len() != y.len() {
        return Err(PyValueError::new_err("x and y differ in length"));
    }
    let mut data = Dataset::new(kind(kind_name)?, first.len());
    for (p, l) in x.into_iter().zip(y) {
        data.push(Vector::from_vec(p), Vector::from_vec(l)).map_err(err)?;
    }
    Ok(data)
}

/// A fitted surrogate. `kind` is `"energy"` (scalar labels) or `"force"`
/// (d-vector labels).
#[pyclass(name = "Gpr", frozen)]
struct PyGpr(GprModel);

#[pymethods]
impl PyGpr {
    #[new]
    fn new(kind: &str, x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, params: PyKernelParams) -> PyResult<Self> {
        GprModel::fit(dataset(kind, x, y)?, params.0).map(Self).map_err(err)
    }

    #[getter]
    fn params(&self) -> PyKernelParams {
        PyKernelParams(*self.0.params())
    }

    /// Posterior mean label and the variance of its first component.
    fn predict_value(&self, x: Vec<f64>) -> PyResult<(Vec<f64>, f64)> {
        let (m, v) = self.0.predict_value(&x).map_err(err)?;
        Ok((m.iter().copied().collect(), v))
    }

    /// Means and marginal variances of `b` and `J` at `x`.
    fn predict_derivatives<'py>(&self, py: Python<'py>, x: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let p = self.0.predict_derivatives(&x).map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("mu_b", p.mu_b.iter().copied().collect::<Vec<_>>())?;
        out.set_item("mu_j", rows(&p.mu_j))?;
        out.set_item("var_b", p.var_b.iter().copied().collect::<Vec<_>>())?;
        out.set_item("var_j", rows(&p.var_j))?;
        Ok(out)
    }
}

/// Maximum-likelihood hyperparameters starting from `init`.
#[pyfunction]
#[pyo3(signature = (kind, x, y, init, budget = 80, seed = 0, noise_free = true))]
fn fit_hyperparams(
    kind: &str,
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    init: PyKernelParams,
    budget: usize,
    seed: u64,
    noise_free: bool,
) -> PyResult<PyKernelParams> {
    let data = dataset(kind, x, y)?;
    let opts = MleOptions {
        budget,
        seed,
        noise_free,
        starts: 1,
    };
    Ok(PyKernelParams(optimize_hyperparams(&data, init.0, &opts).params))
}

/// One GAD step; returns the new `(x, v)`.
#[pyfunction]
fn gad_step(x: Vec<f64>, v: Vec<f64>, b: Vec<f64>, j: Vec<Vec<f64>>, dt: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let s = GadState::new(Vector::from_vec(x), Vector::from_vec(v)).map_err(err)?;
    let n = step(&s, &Vector::from_vec(b), &matrix(&j)?, dt).map_err(err)?;
    Ok((n.x.iter().copied().collect(), n.v.iter().copied().collect()))
}

/// Runs a configuration given as text, without writing any files.
#[pyfunction]
#[pyo3(signature = (config, seed = None, mode = None))]
fn run<'py>(py: Python<'py>, config: &str, seed: Option<u64>, mode: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let mode = match mode {
        None => None,
        Some(m) => Some(Mode::parse(m).ok_or_else(|| PyValueError::new_err(format!("unknown mode {m:?}")))?),
    };
    let overrides = Overrides {
        seed,
        mode,
        ..Default::default()
    };
    let cfg = ExperimentConfig::parse_with_overrides(config, &overrides).map_err(err)?;
    let p = problem(&cfg.problem)?;
    let start = cfg.start_state().map_err(err)?;
    let result: GadResult = match cfg.mode {
        Mode::Reference if cfg.noise_var > 0.0 => {
            let mut src = NoisyFiniteDifference::new(&p, cfg.noise_var, cfg.fd_min_step, cfg.seed).map_err(err)?;
            run_reference_gad(&mut src, &start, &cfg.gad())
        }
        Mode::Reference => run_reference_gad(&mut ExactDerivatives(&p), &start, &cfg.gad()),
        Mode::Agpr => run_agpr_gad(&p, &start, &cfg.gad(), &cfg.active_learning(), cfg.seed),
    }
    .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("x_sp", result.x_sp.iter().copied().collect::<Vec<_>>())?;
    out.set_item("converged", result.converged)?;
    out.set_item("cost", result.cost)?;
    out.set_item("updates", result.updates)?;
    out.set_item("steps", result.trajectory.len() - 1)?;
    out.set_item(
        "trajectory",
        result.trajectory.iter().map(|s| s.x.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
    )?;
    Ok(out)
}

/// Noise-free label of a named benchmark at `x`.
#[pyfunction]
fn evaluate(name: &str, x: Vec<f64>) -> PyResult<Vec<f64>> {
    let p = problem(name)?;
    if x.len() != p.dim() {
        return Err(PyValueError::new_err(format!("expected {} coordinates", p.dim())));
    }
    Ok(p.evaluate(&x).iter().copied().collect())
}

/// Critical points of a named benchmark as `(point, unstable directions)`.
#[pyfunction]
#[pyo3(signature = (name, grid = 40))]
fn oracle(name: &str, grid: usize) -> PyResult<Vec<(Vec<f64>, usize)>> {
    let p = problem(name)?;
    Ok(oracle_critical_points(&p, grid).into_iter().map(|c| (c.point, c.index)).collect())
}

#[pymodule]
fn agpr_gad_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKernelParams>()?;
    m.add_class::<PyGpr>()?;
    m.add_function(wrap_pyfunction!(fit_hyperparams, m)?)?;
    m.add_function(wrap_pyfunction!(gad_step, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    Ok(())
}
