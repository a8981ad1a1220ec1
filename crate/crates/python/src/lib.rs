//! Python bindings. Matrices cross the boundary as nested lists of floats
//! (numpy arrays are accepted on input).

use nalgebra::DMatrix;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use drlqg_core::ambiguity::{self, AmbiguitySpec, GelbrichBall};
use drlqg_core::error::Error;
use drlqg_core::frank_wolfe::{self, FwConfig};
use drlqg_core::gradient::{self, GradientBlocks};
use drlqg_core::instance::{self, InstanceFile};
use drlqg_core::linalg::SymMatrix;
use drlqg_core::lqg::{self, FeedbackGains, KalmanPolicy};
use drlqg_core::saddle;
use drlqg_core::simulate;
use drlqg_core::system::{CovarianceProfile, TimeVaryingSystem};

type Rows = Vec<Vec<f64>>;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::File { .. } => PyOSError::new_err(e.to_string()),
        Error::Singular(_) | Error::BisectionCap { .. } | Error::NotPsdGradient { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: &Rows, field: &str) -> PyResult<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(PyValueError::new_err(format!("{field}: matrix must be non-empty")));
    }
    instance::from_rows(rows, nrows, ncols, field).map_err(to_py)
}

fn sym(rows: &Rows, field: &str) -> PyResult<SymMatrix> {
    instance::sym_from_rows(rows, rows.len(), field).map_err(to_py)
}

fn rows(m: &DMatrix<f64>) -> Rows {
    instance::to_rows(m)
}

fn matrices(items: &[Rows], name: &str) -> PyResult<Vec<DMatrix<f64>>> {
    items.iter().enumerate().map(|(t, m)| matrix(m, &format!("{name}[{t}]"))).collect()
}

fn syms(items: &[Rows], name: &str) -> PyResult<Vec<SymMatrix>> {
    items.iter().enumerate().map(|(t, m)| sym(m, &format!("{name}[{t}]"))).collect()
}

/// Time-varying plant `x_{t+1} = A_t x_t + B_t u_t + w_t`, `y_t = C_t x_t + v_t`
/// with stage costs `Q_t` (T+1 of them) and `R_t`.
#[pyclass(name = "System", module = "drlqg", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySystem {
    inner: TimeVaryingSystem,
}

#[pymethods]
impl PySystem {
    #[new]
    fn new(a: Vec<Rows>, b: Vec<Rows>, c: Vec<Rows>, q: Vec<Rows>, r: Vec<Rows>) -> PyResult<Self> {
        let inner = TimeVaryingSystem::new(
            matrices(&a, "a")?,
            matrices(&b, "b")?,
            matrices(&c, "c")?,
            syms(&q, "q")?,
            syms(&r, "r")?,
        )
        .map_err(to_py)?;
        Ok(PySystem { inner })
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    #[getter]
    fn dims(&self) -> (usize, usize, usize) {
        (self.inner.state_dim(), self.inner.input_dim(), self.inner.output_dim())
    }

    fn riccati(&self) -> PyResult<(Vec<Rows>, Vec<Rows>)> {
        let sol = lqg::riccati_backward(&self.inner).map_err(to_py)?;
        Ok((sol.p.iter().map(|p| rows(p)).collect(), sol.k.iter().map(rows).collect()))
    }

    fn __repr__(&self) -> String {
        let (n, m, p) = self.dims();
        format!("System(n={n}, m={m}, p={p}, horizon={})", self.inner.horizon())
    }
}

/// Covariances of the initial state, process noise and measurement noise.
#[pyclass(name = "Covariances", module = "drlqg", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCovariances {
    inner: CovarianceProfile,
}

#[pymethods]
impl PyCovariances {
    #[new]
    fn new(x0: Rows, w: Vec<Rows>, v: Vec<Rows>) -> PyResult<Self> {
        if w.len() != v.len() {
            return Err(PyValueError::new_err("w and v must have one matrix per stage"));
        }
        Ok(PyCovariances { inner: CovarianceProfile { x0: sym(&x0, "x0")?, w: syms(&w, "w")?, v: syms(&v, "v")? } })
    }

    #[getter]
    fn x0(&self) -> Rows {
        rows(&self.inner.x0)
    }

    #[getter]
    fn w(&self) -> Vec<Rows> {
        self.inner.w.iter().map(|z| rows(z)).collect()
    }

    #[getter]
    fn v(&self) -> Vec<Rows> {
        self.inner.v.iter().map(|z| rows(z)).collect()
    }

    fn __repr__(&self) -> String {
        format!("Covariances(horizon={}, n={})", self.inner.horizon(), self.inner.x0.dim())
    }
}

/// Plant, nominal covariances and per-block radii.
#[pyclass(name = "Problem", module = "drlqg", frozen)]
struct PyProblem {
    inner: instance::Problem,
}

#[pymethods]
impl PyProblem {
    #[new]
    fn new(system: &PySystem, nominal: &PyCovariances, rho: f64) -> PyResult<Self> {
        let ambiguity = AmbiguitySpec::uniform(nominal.inner.clone(), rho);
        nominal.inner.validate_for(&system.inner).map_err(to_py)?;
        ambiguity.validate().map_err(to_py)?;
        Ok(PyProblem { inner: instance::Problem { system: system.inner.clone(), ambiguity } })
    }

    /// Seeded benchmark instance.
    #[staticmethod]
    #[pyo3(signature = (n, m, p, horizon, seed, rho = 0.1))]
    fn generate(n: usize, m: usize, p: usize, horizon: usize, seed: u64, rho: f64) -> PyResult<Self> {
        let inner = instance::generate(n, m, p, horizon, seed, rho).and_then(|f| f.to_problem()).map_err(to_py)?;
        Ok(PyProblem { inner })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(PyProblem { inner: instance::load_problem(&path).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = InstanceFile::parse(text, "<string>").and_then(|f| f.to_problem()).map_err(to_py)?;
        Ok(PyProblem { inner })
    }

    fn to_json(&self) -> String {
        InstanceFile::from_problem(&self.inner, None).to_json()
    }

    #[getter]
    fn system(&self) -> PySystem {
        PySystem { inner: self.inner.system.clone() }
    }

    #[getter]
    fn nominal(&self) -> PyCovariances {
        PyCovariances { inner: self.inner.ambiguity.nominal.clone() }
    }

    /// Indices of blocks of `cov` outside their ambiguity ball.
    #[pyo3(signature = (cov, tol = 1e-7))]
    fn infeasible_blocks(&self, cov: &PyCovariances, tol: f64) -> PyResult<Vec<String>> {
        let ids = self.inner.ambiguity.infeasible_blocks(&cov.inner, tol).map_err(to_py)?;
        Ok(ids.iter().map(ToString::to_string).collect())
    }

    /// Runs Frank-Wolfe; the GIL is released while it runs.
    #[pyo3(signature = (tol = 1e-3, delta = 0.95, max_iter = 1000, parallel = true))]
    fn solve(&self, py: Python<'_>, tol: f64, delta: f64, max_iter: usize, parallel: bool) -> PyResult<PySolution> {
        let cfg = FwConfig { delta, tol, max_iter, parallel_oracles: parallel };
        let problem = &self.inner;
        let sol = py.detach(|| frank_wolfe::solve(&problem.system, &problem.ambiguity, &cfg)).map_err(to_py)?;
        Ok(PySolution { problem: problem.clone(), inner: sol })
    }

    fn __repr__(&self) -> String {
        let sys = &self.inner.system;
        format!(
            "Problem(n={}, m={}, p={}, horizon={}, rho_x0={})",
            sys.state_dim(),
            sys.input_dim(),
            sys.output_dim(),
            sys.horizon(),
            self.inner.ambiguity.rho_x0
        )
    }
}

/// Output of `Problem.solve`.
#[pyclass(name = "Solution", module = "drlqg", frozen)]
struct PySolution {
    problem: instance::Problem,
    inner: frank_wolfe::RobustSolution,
}

#[pymethods]
impl PySolution {
    #[getter]
    fn worst_case(&self) -> PyCovariances {
        PyCovariances { inner: self.inner.worst_case.clone() }
    }

    #[getter]
    fn f_value(&self) -> f64 {
        self.inner.f_value
    }

    #[getter]
    fn final_gap(&self) -> f64 {
        self.inner.final_gap
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged()
    }

    #[getter]
    fn status(&self) -> &'static str {
        self.inner.status.as_str()
    }

    /// `(iter, f_value, surrogate_gap, elapsed_ms)` per iteration.
    #[getter]
    fn trace(&self) -> Vec<(usize, f64, f64, f64)> {
        self.inner.trace.records.iter().map(|r| (r.iter, r.f_value, r.surrogate_gap, r.elapsed_ms)).collect()
    }

    /// Control gains `K_t` and filter gains `L_t`.
    #[getter]
    fn gains(&self) -> (Vec<Rows>, Vec<Rows>) {
        let g = self.inner.controller.gains();
        (g.k.iter().map(rows).collect(), g.l.iter().map(rows).collect())
    }

    /// Returns `(passed, f_star, nature_max, controller_min, violations)`.
    #[pyo3(signature = (n_samples = 100, seed = 0))]
    fn saddle_check(&self, n_samples: usize, seed: u64) -> PyResult<(bool, f64, f64, f64, Vec<String>)> {
        let r = saddle::saddle_check(&self.problem.system, &self.problem.ambiguity, &self.inner, n_samples, seed)
            .map_err(to_py)?;
        let mut violations: Vec<String> = r.violations.iter().map(ToString::to_string).collect();
        violations.extend(r.infeasible.iter().map(|id| format!("block {id} outside its ball")));
        Ok((r.passed(), r.f_star, r.nature_max, r.controller_min, violations))
    }

    fn __repr__(&self) -> String {
        format!(
            "Solution(status={}, iterations={}, f_value={}, final_gap={:e})",
            self.status(),
            self.inner.trace.len(),
            self.inner.f_value,
            self.inner.final_gap
        )
    }
}

fn gradient_dict(py: Python<'_>, g: &GradientBlocks) -> PyResult<Py<PyAny>> {
    let d = pyo3::types::PyDict::new(py);
    d.set_item("x0", rows(&g.x0))?;
    d.set_item("w", g.w.iter().map(|z| rows(z)).collect::<Vec<_>>())?;
    d.set_item("v", g.v.iter().map(|z| rows(z)).collect::<Vec<_>>())?;
    Ok(d.into_any().unbind())
}

/// Optimal expected LQG cost.
#[pyfunction]
fn lqg_value(system: &PySystem, cov: &PyCovariances) -> PyResult<f64> {
    lqg::lqg_value(&system.inner, &cov.inner).map_err(to_py)
}

/// Gradient of the LQG value with respect to every covariance block.
#[pyfunction]
fn grad_f(py: Python<'_>, system: &PySystem, cov: &PyCovariances) -> PyResult<Py<PyAny>> {
    gradient_dict(py, &gradient::grad_f(&system.inner, &cov.inner).map_err(to_py)?)
}

/// Central finite-difference gradient.
#[pyfunction]
#[pyo3(signature = (system, cov, step = gradient::DEFAULT_FD_STEP))]
fn fd_grad(py: Python<'_>, system: &PySystem, cov: &PyCovariances, step: f64) -> PyResult<Py<PyAny>> {
    gradient_dict(py, &gradient::fd_grad(&system.inner, &cov.inner, step).map_err(to_py)?)
}

#[pyfunction]
fn gelbrich_distance(a: Rows, b: Rows) -> PyResult<f64> {
    ambiguity::gelbrich_distance(&sym(&a, "a")?, &sym(&b, "b")?).map_err(to_py)
}

/// Approximate maximizer of `<gradient, L - reference>` over the floored
/// Gelbrich ball; returns `(L, gap)`.
#[pyfunction]
#[pyo3(signature = (center, radius, gradient, reference, delta = 0.95))]
fn oracle_maximize(center: Rows, radius: f64, gradient: Rows, reference: Rows, delta: f64) -> PyResult<(Rows, f64)> {
    let ball = GelbrichBall::new(sym(&center, "center")?, radius).map_err(to_py)?;
    let res = ambiguity::oracle_maximize(&ball, &sym(&gradient, "gradient")?, &sym(&reference, "reference")?, delta)
        .map_err(to_py)?;
    Ok((rows(&res.maximizer), res.gap_contribution))
}

/// Monte Carlo cost of the Kalman-based controller with gains `k`, `l`;
/// returns `(mean, standard_error)`.
#[pyfunction]
#[pyo3(signature = (system, k, l, cov, samples = 10_000, seed = 0))]
fn monte_carlo_cost(
    py: Python<'_>,
    system: &PySystem,
    k: Vec<Rows>,
    l: Vec<Rows>,
    cov: &PyCovariances,
    samples: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let gains = FeedbackGains { k: matrices(&k, "k")?, l: matrices(&l, "l")? };
    gains.validate_for(&system.inner).map_err(to_py)?;
    let sys = &system.inner;
    let est = py
        .detach(|| simulate::monte_carlo_cost(sys, &mut KalmanPolicy::from_gains(sys, &gains), &cov.inner, samples, seed))
        .map_err(to_py)?;
    Ok((est.mean, est.std_err))
}

#[pymodule]
fn drlqg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystem>()?;
    m.add_class::<PyCovariances>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(lqg_value, m)?)?;
    m.add_function(wrap_pyfunction!(grad_f, m)?)?;
    m.add_function(wrap_pyfunction!(fd_grad, m)?)?;
    m.add_function(wrap_pyfunction!(gelbrich_distance, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_maximize, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo_cost, m)?)?;
    Ok(())
}
