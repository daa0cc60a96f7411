//! Python bindings: scenarios, ensembles, forward simulation, Nash search
//! and the scenario oracles.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use volterra_games::calculus::Flow;
use volterra_games::forward::solve_fsvie;
use volterra_games::game::{
    estimate_performance, find_nash, GameScenario, NashCandidate, NashOptions, StepRule,
};
use volterra_games::noise::PathEnsemble;
use volterra_games::scenarios::{builtin, builtin_names, run_scenario_5_1, run_scenario_5_2, s51, s52, OracleResult};
use volterra_games::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn params_json(py: Python<'_>, params: Option<&Bound<'_, PyDict>>) -> PyResult<Option<String>> {
    match params {
        None => Ok(None),
        Some(d) => {
            let json = py.import("json")?;
            Ok(Some(json.call_method1("dumps", (d,))?.extract()?))
        }
    }
}

fn parse<T: serde::de::DeserializeOwned + Default>(json: Option<&str>) -> PyResult<T> {
    match json {
        None => Ok(T::default()),
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(format!("params: {e}"))),
    }
}

fn build(name: &str, json: Option<&str>) -> PyResult<GameScenario> {
    match name {
        "scenario-5-1" => s51::build(&parse(json)?).map_err(py_err),
        "scenario-5-2" => s52::build(&parse(json)?, Flow::F).map_err(py_err),
        _ if json.is_some() => Err(PyValueError::new_err(format!("scenario `{name}` takes no parameters"))),
        _ => builtin(name).map_err(py_err),
    }
}

/// Built-in scenario names.
#[pyfunction]
fn list_scenarios() -> Vec<&'static str> {
    builtin_names().to_vec()
}

/// Monte Carlo path ensemble.
#[pyclass(frozen)]
struct Ensemble {
    inner: PathEnsemble,
}

#[pymethods]
impl Ensemble {
    #[getter]
    fn paths(&self) -> usize {
        self.inner.paths()
    }

    #[getter]
    fn cells(&self) -> usize {
        self.inner.cells()
    }

    fn nodes(&self) -> Vec<f64> {
        let g = self.inner.grid();
        (0..=self.inner.cells()).map(|n| g.node(n)).collect()
    }

    fn brownian_level(&self, path: usize, node: usize) -> PyResult<f64> {
        self.check(path, node)?;
        Ok(self.inner.brownian_level(path, node))
    }

    /// Elapsed Brownian and jump clocks at a node.
    fn clocks(&self, path: usize, node: usize) -> PyResult<(f64, f64)> {
        self.check(path, node)?;
        Ok((self.inner.clock_b(path, node), self.inner.clock_h(path, node)))
    }
}

impl Ensemble {
    fn check(&self, path: usize, node: usize) -> PyResult<()> {
        if path >= self.inner.paths() || node > self.inner.cells() {
            return Err(PyValueError::new_err(format!("path {path}, node {node} out of range")));
        }
        Ok(())
    }
}

/// Result of a Nash search.
#[pyclass(frozen)]
struct Candidate {
    inner: NashCandidate,
}

#[pymethods]
impl Candidate {
    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn residual_norms(&self) -> (f64, f64) {
        (self.inner.residual_norms[0], self.inner.residual_norms[1])
    }

    #[getter]
    fn values(&self) -> (f64, f64) {
        (self.inner.performance.j[0], self.inner.performance.j[1])
    }

    /// Constant coefficient of player `player`'s control per cell.
    fn control(&self, player: usize) -> PyResult<Vec<f64>> {
        let c = self
            .inner
            .controls
            .get(player)
            .ok_or_else(|| PyValueError::new_err("player must be 0 or 1"))?;
        Ok((0..self.inner.residuals[player].len()).map(|j| c.cell_coefficients(j)[0]).collect())
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text)
            .map(|inner| Self { inner })
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

/// A game: dynamics, both players' functionals and their control classes.
#[pyclass(frozen)]
struct Scenario {
    inner: GameScenario,
}

#[pymethods]
impl Scenario {
    #[new]
    #[pyo3(signature = (name, params=None))]
    fn new(py: Python<'_>, name: &str, params: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let json = params_json(py, params)?;
        Ok(Self {
            inner: build(name, json.as_deref())?,
        })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn cells(&self) -> usize {
        self.inner.cells
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon
    }

    fn ensemble(&self, py: Python<'_>, seed: u64, paths: usize) -> PyResult<Ensemble> {
        py.detach(|| self.inner.ensemble(seed, paths))
            .map(|inner| Ensemble { inner })
            .map_err(py_err)
    }

    /// State paths `paths x (N + 1)` under constant controls.
    fn simulate(&self, py: Python<'_>, ensemble: &Ensemble, controls: (f64, f64)) -> PyResult<Vec<Vec<f64>>> {
        let sc = &self.inner;
        py.detach(|| {
            let c = sc.constant_controls([controls.0, controls.1])?;
            let fwd = solve_fsvie(sc.forward.as_ref(), [&c[0], &c[1]], &ensemble.inner, sc.x0)?;
            Ok(fwd.x.rows().map(|r| r.to_vec()).collect())
        })
        .map_err(py_err)
    }

    /// Both players' functionals and their standard errors under constant controls.
    fn performance(&self, py: Python<'_>, ensemble: &Ensemble, controls: (f64, f64)) -> PyResult<((f64, f64), (f64, f64))> {
        let sc = &self.inner;
        py.detach(|| {
            let c = sc.constant_controls([controls.0, controls.1])?;
            let p = estimate_performance(sc, &c, &ensemble.inner)?;
            Ok(((p.j[0], p.j[1]), (p.std_error[0], p.std_error[1])))
        })
        .map_err(py_err)
    }

    /// Residual-ascent Nash search from constant controls. `step` is a fixed
    /// step size, or `None` for per-cell secant steps.
    #[pyo3(signature = (ensemble, initial, step=Some(0.25), tol=1e-6, max_iterations=100))]
    fn solve(
        &self,
        py: Python<'_>,
        ensemble: &Ensemble,
        initial: (f64, f64),
        step: Option<f64>,
        tol: f64,
        max_iterations: usize,
    ) -> PyResult<Candidate> {
        let opts = NashOptions {
            step: match step {
                Some(step) => StepRule::Fixed { step },
                None => StepRule::Secant { initial: 0.5, max_step: 20.0 },
            },
            max_iterations,
            tol,
        };
        let sc = &self.inner;
        py.detach(|| {
            let init = sc.constant_controls([initial.0, initial.1])?;
            find_nash(sc, &init, &ensemble.inner, &opts)
        })
        .map(|inner| Candidate { inner })
        .map_err(py_err)
    }
}

fn oracle_dict<'py>(py: Python<'py>, r: &OracleResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("name", &r.name)?;
    d.set_item("passed", r.passed)?;
    d.set_item("max_error", r.max_error)?;
    d.set_item("tolerance", r.tolerance)?;
    d.set_item("note", &r.note)?;
    Ok(d)
}

/// Closed-form oracle checks of `scenario-5-1` or `scenario-5-2`.
#[pyfunction]
#[pyo3(signature = (name, params=None, paths=1000, seed=1))]
fn run_oracles<'py>(
    py: Python<'py>,
    name: &str,
    params: Option<&Bound<'py, PyDict>>,
    paths: usize,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let json = params_json(py, params)?;
    let results = match name {
        "scenario-5-1" => {
            let p: s51::Params = parse(json.as_deref())?;
            py.detach(|| run_scenario_5_1(&p, paths, seed))
        }
        "scenario-5-2" => {
            let p: s52::Params = parse(json.as_deref())?;
            py.detach(|| run_scenario_5_2(&p, paths, seed))
        }
        _ => return Err(PyValueError::new_err(format!("no oracles for `{name}`"))),
    }
    .map_err(py_err)?;
    results.iter().map(|r| oracle_dict(py, r)).collect()
}

#[pymodule]
fn pyvolterra(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(list_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(run_oracles, m)?)?;
    m.add_class::<Scenario>()?;
    m.add_class::<Ensemble>()?;
    m.add_class::<Candidate>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
