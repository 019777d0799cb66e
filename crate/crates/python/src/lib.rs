//! Python bindings. Structured results (plans, constants, reports, records)
//! are returned as plain dicts and lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyAny;
use serde::Serialize;

use spillfree::functionals as fun;
use spillfree::model::{self, FullState, PerturbationKind};
use spillfree::solver::{self, Feedback, SolverConfig};
use spillfree::{controller, verify};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "PhysicalParams", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyParams(model::PhysicalParams);

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (g, mu, L, m, H_max))]
    #[allow(non_snake_case)]
    fn new(g: f64, mu: f64, L: f64, m: f64, H_max: f64) -> PyResult<Self> {
        model::PhysicalParams::new(g, mu, L, m, H_max).map(Self).map_err(err)
    }

    #[getter]
    fn g(&self) -> f64 {
        self.0.g
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.0.mu
    }

    #[getter(L)]
    fn length(&self) -> f64 {
        self.0.length
    }

    #[getter(m)]
    fn mass(&self) -> f64 {
        self.0.mass
    }

    #[getter(H_max)]
    fn h_max(&self) -> f64 {
        self.0.h_max
    }

    /// Equilibrium depth `m / L`.
    #[getter]
    fn h_star(&self) -> f64 {
        self.0.h_star()
    }

    /// Radius `R` of the state space.
    #[getter]
    fn radius(&self) -> f64 {
        fun::state_space_radius(&self.0)
    }

    fn __repr__(&self) -> String {
        let p = &self.0;
        format!(
            "PhysicalParams(g={}, mu={}, L={}, m={}, H_max={})",
            p.g, p.mu, p.length, p.mass, p.h_max
        )
    }
}

#[pyclass(name = "Grid", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyGrid(model::Grid);

#[pymethods]
impl PyGrid {
    #[new]
    fn new(params: &PyParams, n: usize) -> PyResult<Self> {
        model::Grid::for_params(&params.0, n).map(Self).map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n
    }

    #[getter]
    fn dx(&self) -> f64 {
        self.0.dx
    }

    fn cell_centers(&self) -> Vec<f64> {
        self.0.cell_centers()
    }

    fn faces(&self) -> Vec<f64> {
        self.0.faces()
    }
}

#[pyclass(name = "Gains", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyGains(fun::Gains);

#[pymethods]
impl PyGains {
    #[new]
    fn new(sigma: f64, q: f64, k: f64, r: f64) -> Self {
        Self(fun::Gains::new(sigma, q, k, r))
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.0.sigma
    }

    #[getter]
    fn q(&self) -> f64 {
        self.0.q
    }

    #[getter]
    fn k(&self) -> f64 {
        self.0.k
    }

    #[getter]
    fn r(&self) -> f64 {
        self.0.r
    }

    /// All constants of the decay estimate, as a dict.
    fn derived_constants<'py>(&self, py: Python<'py>, params: &PyParams) -> PyResult<Bound<'py, PyAny>> {
        let c = fun::derived_constants(&params.0, &self.0).map_err(err)?;
        to_py(py, &c)
    }

    fn __repr__(&self) -> String {
        let g = &self.0;
        format!("Gains(sigma={}, q={}, k={}, r={})", g.sigma, g.q, g.k, g.r)
    }
}

#[pyclass(name = "State", skip_from_py_object)]
#[derive(Clone)]
struct PyState(FullState);

#[pymethods]
impl PyState {
    #[new]
    #[pyo3(signature = (xi, w, h, v, t=0.0))]
    fn new(xi: f64, w: f64, h: Vec<f64>, v: Vec<f64>, t: f64) -> Self {
        Self(FullState { xi, w, h, v, t })
    }

    #[staticmethod]
    #[pyo3(signature = (params, grid, xi=0.0))]
    fn equilibrium(params: &PyParams, grid: &PyGrid, xi: f64) -> Self {
        Self(model::equilibrium_state(&params.0, &grid.0, xi))
    }

    /// `kind` is one of `level_mode`, `velocity_mode`, `combined`.
    #[staticmethod]
    #[pyo3(signature = (params, grid, kind, amplitude, mode_number=1, xi0=0.0, w0=0.0))]
    fn initial_condition(
        params: &PyParams,
        grid: &PyGrid,
        kind: &str,
        amplitude: f64,
        mode_number: u32,
        xi0: f64,
        w0: f64,
    ) -> PyResult<Self> {
        let kind = match kind {
            "level_mode" => PerturbationKind::LevelMode,
            "velocity_mode" => PerturbationKind::VelocityMode,
            "combined" => PerturbationKind::Combined,
            other => return Err(PyValueError::new_err(format!("unknown perturbation kind {other:?}"))),
        };
        model::make_initial_condition(&params.0, &grid.0, kind, amplitude, mode_number, xi0, w0)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn xi(&self) -> f64 {
        self.0.xi
    }

    #[getter]
    fn w(&self) -> f64 {
        self.0.w
    }

    #[getter]
    fn t(&self) -> f64 {
        self.0.t
    }

    #[getter]
    fn h(&self) -> Vec<f64> {
        self.0.h.clone()
    }

    #[getter]
    fn v(&self) -> Vec<f64> {
        self.0.v.clone()
    }

    fn mass(&self, grid: &PyGrid) -> f64 {
        self.0.mass(&grid.0)
    }

    fn validate(&self, params: &PyParams, grid: &PyGrid) -> PyResult<()> {
        self.0.validate(&params.0, &grid.0).map_err(err)
    }

    /// Laboratory-frame view as a dict.
    fn lab_frame<'py>(&self, py: Python<'py>, grid: &PyGrid, a_star: f64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &model::to_lab_frame(&self.0, &grid.0, a_star))
    }
}

#[pyclass(name = "Trajectory", frozen, skip_from_py_object)]
struct PyTrajectory(solver::Trajectory);

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn steps(&self) -> usize {
        self.0.steps
    }

    #[getter]
    fn completed(&self) -> bool {
        self.0.completed()
    }

    #[getter]
    fn failure(&self) -> Option<String> {
        self.0.failure.as_ref().map(ToString::to_string)
    }

    #[getter]
    fn final_state(&self) -> PyState {
        PyState(self.0.final_state.clone())
    }

    #[getter]
    fn flags<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.flags)
    }

    /// Recorded time series as a list of dicts.
    fn records<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.records)
    }

    /// Snapshot times and states.
    fn snapshots(&self) -> Vec<(f64, PyState)> {
        self.0
            .snapshots
            .iter()
            .map(|s| (s.t, PyState(s.state.clone())))
            .collect()
    }

    /// Runs the trajectory checks; envelopes need the design constants of `gains`.
    #[pyo3(signature = (with_envelopes=true))]
    fn checks<'py>(&self, py: Python<'py>, with_envelopes: bool) -> PyResult<Bound<'py, PyAny>> {
        let constants = match (&self.0.feedback, with_envelopes) {
            (Feedback::Closed(g), true) => fun::derived_constants(&self.0.params, g).ok(),
            _ => None,
        };
        to_py(py, &verify::check_trajectory(&self.0, constants.as_ref()))
    }
}

/// Integrates the closed loop (or the open loop with `closed=False`).
#[pyfunction]
#[pyo3(signature = (state, params, gains, grid, t_end, closed=true, cfl=0.4, record_every=1, snapshot_times=Vec::new(), dt_max=None))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    state: &PyState,
    params: &PyParams,
    gains: &PyGains,
    grid: &PyGrid,
    t_end: f64,
    closed: bool,
    cfl: f64,
    record_every: usize,
    snapshot_times: Vec<f64>,
    dt_max: Option<f64>,
) -> PyResult<PyTrajectory> {
    let mut config = SolverConfig::new(t_end);
    config.cfl = cfl;
    config.record_every = record_every;
    config.snapshot_times = snapshot_times;
    config.dt_max = dt_max;
    let feedback = if closed {
        Feedback::Closed(gains.0)
    } else {
        Feedback::Open(gains.0)
    };
    let (initial, p, g) = (state.0.clone(), params.0, grid.0);
    py.detach(move || solver::simulate(&initial, &p, feedback, &g, &config))
        .map(PyTrajectory)
        .map_err(err)
}

#[pyfunction]
fn barrier(h: f64, params: &PyParams) -> PyResult<f64> {
    fun::barrier(h, &params.0).map_err(err)
}

#[pyfunction]
fn barrier_inv(y: f64, params: &PyParams) -> PyResult<f64> {
    fun::barrier_inv(y, &params.0).map_err(err)
}

#[pyfunction]
fn clf_value(state: &PyState, params: &PyParams, gains: &PyGains, grid: &PyGrid) -> PyResult<f64> {
    fun::clf_value(&state.0, &params.0, &gains.0, &grid.0).map_err(err)
}

#[pyfunction]
fn state_norm(state: &PyState, params: &PyParams, grid: &PyGrid) -> f64 {
    fun::state_norm(&state.0, &params.0, &grid.0)
}

#[pyfunction]
fn control_force(state: &PyState, params: &PyParams, gains: &PyGains, grid: &PyGrid) -> f64 {
    controller::control_force(&state.0, &params.0, &gains.0, &grid.0)
}

#[pyfunction]
fn gain_bound(params: &PyParams, sigma: f64, q: f64, r: f64) -> PyResult<f64> {
    fun::gain_bound(&params.0, sigma, q, r).map_err(err)
}

/// `(admissible, bound, margin)` for the gain inequality on `k`.
#[pyfunction]
fn check_gain_condition(params: &PyParams, gains: &PyGains) -> (bool, f64, f64) {
    let check = controller::check_gain_condition(&params.0, &gains.0);
    let bound = match check {
        controller::GainCheck::Ok { bound, .. } | controller::GainCheck::Violated { bound, .. } => bound,
    };
    (check.is_ok(), bound, check.margin())
}

/// Transfer plan as a dict; its `gains` entry can be passed to `Gains(**plan["gains"])`.
#[pyfunction]
fn plan_transfer<'py>(py: Python<'py>, xi0: f64, epsilon: f64, params: &PyParams) -> PyResult<Bound<'py, PyAny>> {
    let plan = controller::plan_transfer(xi0, epsilon, &params.0).map_err(err)?;
    to_py(py, &plan)
}

#[pyfunction]
#[pyo3(signature = (n_samples, params, gains, grid, seed=42))]
fn check_static_inequalities<'py>(
    py: Python<'py>,
    n_samples: usize,
    params: &PyParams,
    gains: &PyGains,
    grid: &PyGrid,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let (p, g, gr) = (params.0, gains.0, grid.0);
    let reports = py.detach(move || verify::check_static_inequalities(n_samples, &p, &g, &gr, seed));
    to_py(py, &reports)
}

/// Same JSON document as the `design` command.
#[pyfunction]
fn design(params: &PyParams, epsilon: f64, xi0: f64) -> PyResult<String> {
    spillfree::cli::design_json(&params.0, epsilon, xi0).map_err(err)
}

#[pymodule]
#[pyo3(name = "spillfree")]
pub fn spillfree_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyGains>()?;
    m.add_class::<PyState>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(barrier, m)?)?;
    m.add_function(wrap_pyfunction!(barrier_inv, m)?)?;
    m.add_function(wrap_pyfunction!(clf_value, m)?)?;
    m.add_function(wrap_pyfunction!(state_norm, m)?)?;
    m.add_function(wrap_pyfunction!(control_force, m)?)?;
    m.add_function(wrap_pyfunction!(gain_bound, m)?)?;
    m.add_function(wrap_pyfunction!(check_gain_condition, m)?)?;
    m.add_function(wrap_pyfunction!(plan_transfer, m)?)?;
    m.add_function(wrap_pyfunction!(check_static_inequalities, m)?)?;
    m.add_function(wrap_pyfunction!(design, m)?)?;
    Ok(())
}
