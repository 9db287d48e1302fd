//! Python bindings: instances, Q-functions, the learning loop and the CLI commands.

use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError, PyValueError};
use pyo3::prelude::*;

use qbenders::algorithm::{self, AlgConfig, Variant};
use qbenders::conic::DEFAULT_TOL;
use qbenders::experiments::{self, Overrides};
use qbenders::one_stage;
use qbenders::oracle::{self, ClippedLqr};
use qbenders::policy::{self, GreedyPolicy, HORIZON_CAP, TAIL_TOL};
use qbenders::problem::{self, ClqrInstance, SamplePointSet, SamplingSpec, StateDistribution};
use qbenders::qfunction::PwmQFunction;
use qbenders::Error;

create_exception!(qbenders, SolverError, PyException, "Infeasible, numerically failed or non-converged solve.");

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Config(_)
        | Error::Parse(_)
        | Error::Dimension(_)
        | Error::Precondition(_)
        | Error::InvalidInstance(_)
        | Error::CutIndex { .. }
        | Error::Csv(_) => PyValueError::new_err(e.to_string()),
        _ => SolverError::new_err(e.to_string()),
    }
}

type Rows = Vec<Vec<f64>>;

fn vec(x: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(x)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[pyclass(name = "Instance", module = "qbenders", frozen)]
struct PyInstance {
    inner: Arc<ClqrInstance>,
}

#[pymethods]
impl PyInstance {
    /// `x⁺ = 0.9x + u`, `|u| ≤ 1`, unit weights, γ = 1.
    #[staticmethod]
    fn scalar() -> Self {
        PyInstance {
            inner: Arc::new(ClqrInstance::scalar_benchmark()),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (seed, n_x, n_u, norm_cap = 0.99))]
    fn random(seed: u64, n_x: usize, n_u: usize, norm_cap: f64) -> PyResult<Self> {
        let inner = problem::random_instance(seed, n_x, n_u, norm_cap).map_err(py_err)?;
        Ok(PyInstance { inner: Arc::new(inner) })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = ClqrInstance::from_json(text).map_err(py_err)?;
        Ok(PyInstance { inner: Arc::new(inner) })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = ClqrInstance::load(&path).map_err(py_err)?;
        Ok(PyInstance { inner: Arc::new(inner) })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn n_x(&self) -> usize {
        self.inner.n_x()
    }

    #[getter]
    fn n_u(&self) -> usize {
        self.inner.n_u()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn a(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.a)
    }

    #[getter]
    fn b(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.b)
    }

    fn stage_cost(&self, x: Vec<f64>, u: Vec<f64>) -> PyResult<f64> {
        let (x, u) = (vec(x), vec(u));
        self.inner.check_point(&x, &u).map_err(py_err)?;
        Ok(self.inner.stage_cost(&x, &u))
    }

    fn dynamics(&self, x: Vec<f64>, u: Vec<f64>) -> PyResult<Vec<f64>> {
        let (x, u) = (vec(x), vec(u));
        self.inner.check_point(&x, &u).map_err(py_err)?;
        Ok(self.inner.dynamics(&x, &u).as_slice().to_vec())
    }

    #[pyo3(signature = (x, u, tol = 1e-8))]
    fn is_feasible(&self, x: Vec<f64>, u: Vec<f64>, tol: f64) -> PyResult<bool> {
        let (x, u) = (vec(x), vec(u));
        self.inner.check_point(&x, &u).map_err(py_err)?;
        Ok(self.inner.is_feasible(&x, &u, tol))
    }

    /// `[(name, passed, value, detail), …]`
    fn validate(&self) -> Vec<(String, bool, f64, String)> {
        problem::validate_instance(&self.inner)
            .checks
            .into_iter()
            .map(|c| (c.name.to_string(), c.passed, c.value, c.detail))
            .collect()
    }

    /// `(K, P)` of the discounted unconstrained problem.
    fn riccati_gain(&self) -> PyResult<(Rows, Rows)> {
        let sol = oracle::riccati_gain(&self.inner).map_err(py_err)?;
        Ok((rows(&sol.k), rows(&sol.p)))
    }

    /// `π(x) = clip(−Kx)` into the input box.
    fn clipped_lqr(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let k = oracle::riccati_gain(&self.inner).map_err(py_err)?.k;
        let u = oracle::clipped_lqr_policy(&self.inner, &k, &vec(x)).map_err(py_err)?;
        Ok(u.as_slice().to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "Instance(n_x={}, n_u={}, n_c={}, gamma={})",
            self.inner.n_x(),
            self.inner.n_u(),
            self.inner.n_c(),
            self.inner.gamma
        )
    }
}

#[pyclass(name = "QFunction", module = "qbenders")]
struct PyQFunction {
    inner: PwmQFunction,
}

#[pymethods]
impl PyQFunction {
    /// Starts from `Q_0 = ℓ`.
    #[new]
    fn new(instance: &PyInstance) -> Self {
        PyQFunction {
            inner: PwmQFunction::new(Arc::clone(&instance.inner)),
        }
    }

    #[staticmethod]
    fn from_json(instance: &PyInstance, text: &str) -> PyResult<Self> {
        let inner = PwmQFunction::from_json(Arc::clone(&instance.inner), text).map_err(py_err)?;
        Ok(PyQFunction { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn instance(&self) -> PyInstance {
        PyInstance {
            inner: Arc::clone(self.inner.instance_arc()),
        }
    }

    /// `(Q(x, u), index of the active cut)`.
    fn eval(&self, x: Vec<f64>, u: Vec<f64>) -> PyResult<(f64, usize)> {
        self.inner.eval_q(&vec(x), &vec(u)).map_err(py_err)
    }

    /// `[(index, nu, xi), …]`
    fn cuts(&self) -> Vec<(usize, Vec<f64>, f64)> {
        self.inner
            .cuts()
            .iter()
            .map(|c| (c.index, c.nu.as_slice().to_vec(), c.xi))
            .collect()
    }

    /// The iterate formed by the first `n` cuts.
    fn prefix(&self, n: usize) -> Self {
        PyQFunction {
            inner: self.inner.prefix(n),
        }
    }

    /// `T_Q Q(x, u)` and the successor's multiplier `ν`.
    #[pyo3(signature = (x, u, tol = DEFAULT_TOL))]
    fn apply_bellman(&self, py: Python<'_>, x: Vec<f64>, u: Vec<f64>, tol: f64) -> PyResult<(f64, Vec<f64>)> {
        let sol = py
            .detach(|| one_stage::apply_bellman(&self.inner, &vec(x), &vec(u), tol))
            .map_err(py_err)?;
        let nu = sol.duals.as_ref().map_or(Vec::new(), |d| d.nu.as_slice().to_vec());
        Ok((sol.value, nu))
    }

    #[pyo3(signature = (x, u, tol = DEFAULT_TOL))]
    fn bellman_error(&self, py: Python<'_>, x: Vec<f64>, u: Vec<f64>, tol: f64) -> PyResult<f64> {
        py.detach(|| one_stage::bellman_error(&self.inner, &vec(x), &vec(u), tol))
            .map_err(py_err)
    }

    /// Adds the cut generated at `(x, u)` and returns the Bellman error it closed there.
    #[pyo3(signature = (x, u, tol = DEFAULT_TOL))]
    fn add_cut_at(&mut self, py: Python<'_>, x: Vec<f64>, u: Vec<f64>, tol: f64) -> PyResult<f64> {
        let (x, u) = (vec(x), vec(u));
        let q = &mut self.inner;
        py.detach(|| {
            let ev = one_stage::evaluate_bellman(q, &x, &u, tol)?;
            let cut = one_stage::extract_cut(&ev.solution, q, &x, &u)?;
            q.add_cut(cut)?;
            Ok(ev.error)
        })
        .map_err(py_err)
    }

    /// `(argmin_u Q(x, u), min value)` over the admissible inputs.
    #[pyo3(signature = (x, tol = DEFAULT_TOL))]
    fn greedy_input(&self, py: Python<'_>, x: Vec<f64>, tol: f64) -> PyResult<(Vec<f64>, f64)> {
        let (u, v) = py
            .detach(|| policy::greedy_input(&self.inner, &vec(x), tol))
            .map_err(py_err)?;
        Ok((u.as_slice().to_vec(), v))
    }

    /// Closed-loop discounted cost of the greedy policy: `(cost, steps)`.
    #[pyo3(signature = (x0, horizon_cap = HORIZON_CAP, tail_tol = TAIL_TOL))]
    fn simulate(&self, py: Python<'_>, x0: Vec<f64>, horizon_cap: usize, tail_tol: f64) -> PyResult<(f64, usize)> {
        let rec = py
            .detach(|| {
                let p = GreedyPolicy {
                    q: &self.inner,
                    tol: DEFAULT_TOL,
                };
                policy::simulate(&p, self.inner.instance(), &vec(x0), horizon_cap, tail_tol)
            })
            .map_err(py_err)?;
        Ok((rec.total_cost, rec.horizon))
    }
}

/// Closed-loop discounted cost of clipped LQR: `(cost, steps)`.
#[pyfunction]
#[pyo3(signature = (instance, x0, horizon_cap = HORIZON_CAP, tail_tol = TAIL_TOL))]
fn simulate_clipped_lqr(instance: &PyInstance, x0: Vec<f64>, horizon_cap: usize, tail_tol: f64) -> PyResult<(f64, usize)> {
    let inst = &instance.inner;
    let gain = oracle::riccati_gain(inst).map_err(py_err)?.k;
    let p = ClippedLqr { inst, gain };
    let rec = policy::simulate(&p, inst, &vec(x0), horizon_cap, tail_tol).map_err(py_err)?;
    Ok((rec.total_cost, rec.horizon))
}

/// Sample states (and inputs when `with_inputs`) from a uniform box or, with `std`, a Gaussian.
#[pyfunction]
#[pyo3(signature = (instance, m, seed, low = None, high = None, std = None, with_inputs = false))]
#[allow(clippy::too_many_arguments)]
fn sample_points(
    instance: &PyInstance,
    m: usize,
    seed: u64,
    low: Option<Vec<f64>>,
    high: Option<Vec<f64>>,
    std: Option<f64>,
    with_inputs: bool,
) -> PyResult<(Rows, Option<Rows>)> {
    let states = match (low, high, std) {
        (Some(low), Some(high), None) => StateDistribution::UniformBox { low, high },
        (None, None, Some(std)) => StateDistribution::Gaussian { std },
        _ => return Err(PyValueError::new_err("give either low and high, or std")),
    };
    let pts = problem::sample_points(seed, &instance.inner, m, &SamplingSpec { states, with_inputs }).map_err(py_err)?;
    let to_lists = |v: &[DVector<f64>]| v.iter().map(|x| x.as_slice().to_vec()).collect::<Vec<_>>();
    Ok((to_lists(&pts.states), pts.inputs.as_deref().map(to_lists)))
}

#[pyclass(name = "RunResult", module = "qbenders", frozen)]
struct PyRunResult {
    #[pyo3(get)]
    outcome: String,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    cuts_added: usize,
    /// `[(chosen m, cut added), …]` per iteration.
    #[pyo3(get)]
    decisions: Vec<(usize, bool)>,
    /// Largest Bellman error of every sweep.
    #[pyo3(get)]
    max_errors: Vec<f64>,
    #[pyo3(get)]
    cut_seconds: f64,
    #[pyo3(get)]
    total_seconds: f64,
}

#[pymethods]
impl PyRunResult {
    fn __repr__(&self) -> String {
        format!(
            "RunResult(outcome={:?}, iterations={}, cuts_added={})",
            self.outcome, self.iterations, self.cuts_added
        )
    }
}

/// Runs the cutting-plane loop; returns the learned Q-function and the run record.
#[pyfunction]
#[pyo3(signature = (
    instance, states, variant = "B", inputs = None, eps_tol = 1e-3, skip_threshold = 1e-5,
    max_iterations = None, seed = 0, solver_tol = DEFAULT_TOL
))]
#[allow(clippy::too_many_arguments)]
fn run(
    py: Python<'_>,
    instance: &PyInstance,
    states: Vec<Vec<f64>>,
    variant: &str,
    inputs: Option<Vec<Vec<f64>>>,
    eps_tol: f64,
    skip_threshold: f64,
    max_iterations: Option<usize>,
    seed: u64,
    solver_tol: f64,
) -> PyResult<(PyQFunction, PyRunResult)> {
    let inst = Arc::clone(&instance.inner);
    let states: Vec<DVector<f64>> = states.into_iter().map(vec).collect();
    let (variant, points) = match (variant, inputs) {
        ("A", Some(inputs)) => (
            Variant::A,
            SamplePointSet::pairs(&inst, states, inputs.into_iter().map(vec).collect()).map_err(py_err)?,
        ),
        ("B", None) => (Variant::B, SamplePointSet::states_only(&inst, states).map_err(py_err)?),
        _ => return Err(PyValueError::new_err("variant 'A' needs inputs; variant 'B' takes none")),
    };
    let mut cfg = AlgConfig::new(variant, points);
    cfg.eps_tol = eps_tol;
    cfg.skip_threshold = skip_threshold;
    if let Some(n) = max_iterations {
        cfg.max_iterations = n;
    }
    cfg.seed = seed;
    cfg.solver_tol = solver_tol;
    let (q, log) = py.detach(|| algorithm::run(inst, &cfg)).map_err(py_err)?;
    let result = PyRunResult {
        outcome: log.outcome.label().to_string(),
        iterations: log.final_iteration,
        cuts_added: log.cuts_added,
        decisions: log.records.iter().map(|r| (r.chosen, r.cut_added())).collect(),
        max_errors: log.sweeps.iter().map(|s| s.max_error).collect(),
        cut_seconds: log.cut_seconds,
        total_seconds: log.total_seconds,
    };
    Ok((PyQFunction { inner: q }, result))
}

/// Runs a CLI command (`run`, `surface`, `batch`, `policy-eval`, `oracle`,
/// `validate`) on a config file and returns its exit code.
#[pyfunction]
#[pyo3(signature = (command, config, out = None, seed = None, workers = None, verbose = false))]
fn run_command(
    py: Python<'_>,
    command: &str,
    config: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
    verbose: bool,
) -> PyResult<i32> {
    let ov = Overrides {
        out,
        seed,
        workers,
        verbose,
        resolution: None,
    };
    let cmd = match command {
        "run" => experiments::cmd_run,
        "surface" => experiments::cmd_surface,
        "batch" => experiments::cmd_batch,
        "policy-eval" => experiments::cmd_policy_eval,
        "oracle" => experiments::cmd_oracle,
        "validate" => experiments::cmd_validate,
        other => return Err(PyValueError::new_err(format!("unknown command {other:?}"))),
    };
    Ok(py.detach(|| cmd(&config, &ov)))
}

#[pymodule]
#[pyo3(name = "qbenders")]
fn qbenders_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    m.add_class::<PyInstance>()?;
    m.add_class::<PyQFunction>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sample_points, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_clipped_lqr, m)?)?;
    m.add_function(wrap_pyfunction!(run_command, m)?)?;
    Ok(())
}
