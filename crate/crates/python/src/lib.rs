//! Python bindings: networks, zones, rates, assignment and whole runs.
//! Structured results (reports, configs) cross the boundary as plain
//! dicts and lists.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use ridepool::cli::Scenario;
use ridepool::engine::{run, SimConfig};
use ridepool::matching::{solve_assignment as solve, Coverable, SolverCandidate, DEFAULT_NODE_BUDGET};
use ridepool::network::{compute_zones, RoadNetwork};
use ridepool::rates::{smooth_rates, RateField, RateKind, RateMethod};
use ridepool::scenarios::{circular_city, grid_network, two_zone, CircularParams, Instance, TwoZoneParams};
use ridepool::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_json_value<T: serde::Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_json_value<T: serde::de::DeserializeOwned + Default>(py: Python<'_>, v: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    let Some(v) = v else { return Ok(T::default()) };
    let text: String = py.import("json")?.call_method1("dumps", (v,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Road network with all shortest travel times.
#[pyclass(name = "RoadNetwork", module = "ridepool_py", unsendable)]
struct PyRoadNetwork {
    inner: RoadNetwork,
}

#[pymethods]
impl PyRoadNetwork {
    /// Reads the `N id x y` / `E from to seconds` text format.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyRoadNetwork {
            inner: RoadNetwork::load(path).map_err(to_py)?,
        })
    }

    /// `cols x rows` grid of two-way roads; node id `row * cols + col`.
    #[staticmethod]
    fn grid(cols: usize, rows: usize, edge: i64) -> PyResult<Self> {
        Ok(PyRoadNetwork {
            inner: grid_network(cols, rows, edge).map_err(to_py)?,
        })
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    /// Shortest travel time between external node ids.
    fn travel_time(&self, a: u64, b: u64) -> PyResult<i64> {
        self.inner.shortest_travel_time(a, b).map_err(to_py)
    }

    /// External node ids along a shortest path.
    fn path(&self, a: u64, b: u64) -> PyResult<Vec<u64>> {
        let (u, w) = (self.inner.node_of(a).map_err(to_py)?, self.inner.node_of(b).map_err(to_py)?);
        Ok(self.inner.path(u, w).node_sequence.iter().map(|&x| self.inner.external_id(x)).collect())
    }

    /// Zone index of every node (in node order) for radius `t_m` seconds.
    fn zones(&self, t_m: i64) -> PyResult<Vec<usize>> {
        Ok(compute_zones(&self.inner, t_m).map_err(to_py)?.zone_of)
    }

    /// Rates spread from per-node counts with smoothing constant `psi`.
    fn smooth(&self, counts: Vec<f64>, psi: f64) -> PyResult<Vec<f64>> {
        if counts.len() != self.inner.node_count() {
            return Err(PyValueError::new_err("one count per node expected"));
        }
        if !(psi > 0.0) {
            return Err(PyValueError::new_err("psi must be positive"));
        }
        let base = RateField {
            kind: RateKind::Generation,
            method: RateMethod::Basic,
            values: counts,
            instant: 0,
        };
        Ok(smooth_rates(&self.inner, &base, psi).values)
    }

    fn __repr__(&self) -> String {
        format!("RoadNetwork(nodes={}, edges={})", self.inner.node_count(), self.inner.edge_count())
    }
}

/// Minimum-cost selection of candidates `(vehicle, [requests], cost)` with
/// rejection penalties `(request, penalty or None)`. Returns
/// `(selected indices, rejected requests, objective, optimal)`.
#[pyfunction]
fn solve_assignment(
    candidates: Vec<(usize, Vec<usize>, i64)>,
    requests: Vec<(usize, Option<i64>)>,
) -> (Vec<usize>, Vec<usize>, i64, bool) {
    let cands: Vec<SolverCandidate> = candidates
        .into_iter()
        .map(|(vehicle, mut trip, cost)| {
            trip.sort_unstable();
            SolverCandidate { vehicle, trip, cost }
        })
        .collect();
    let reqs: Vec<Coverable> = requests
        .into_iter()
        .map(|(request, penalty)| Coverable { request, penalty })
        .collect();
    let a = solve(&cands, &reqs, DEFAULT_NODE_BUDGET);
    (a.selected, a.rejected, a.objective, a.optimal)
}

/// Default simulation settings as a dict.
#[pyfunction]
fn default_config(py: Python<'_>) -> PyResult<Py<PyAny>> {
    to_json_value(py, &SimConfig::default())
}

fn run_instance(py: Python<'_>, inst: Instance, config: Option<&Bound<'_, PyAny>>) -> PyResult<Py<PyAny>> {
    let cfg: SimConfig = from_json_value(py, config)?;
    let vehicles = inst.vehicles().map_err(to_py)?;
    let out = run(&inst.net, inst.zones.clone(), &inst.trace, vehicles, vec![], cfg).map_err(to_py)?;
    let value = serde_json::json!({
        "report": out.report,
        "stages": out.stages,
    });
    to_json_value(py, &value)
}

/// Runs the two-district grid city; returns `{"report": ..., "stages": [...]}`.
#[pyfunction]
#[pyo3(signature = (seed, config=None, params=None))]
fn run_two_zone(
    py: Python<'_>,
    seed: u64,
    config: Option<&Bound<'_, PyAny>>,
    params: Option<&Bound<'_, PyAny>>,
) -> PyResult<Py<PyAny>> {
    let p: TwoZoneParams = from_json_value(py, params)?;
    run_instance(py, two_zone(&p, seed).map_err(to_py)?, config)
}

/// Runs the circular city; returns `{"report": ..., "stages": [...]}`.
#[pyfunction]
#[pyo3(signature = (seed, config=None, params=None))]
fn run_circular(
    py: Python<'_>,
    seed: u64,
    config: Option<&Bound<'_, PyAny>>,
    params: Option<&Bound<'_, PyAny>>,
) -> PyResult<Py<PyAny>> {
    let p: CircularParams = from_json_value(py, params)?;
    run_instance(py, circular_city(&p, seed).map_err(to_py)?, config)
}

/// Runs a scenario file's sweep; returns one dict per cell with its report.
#[pyfunction]
#[pyo3(signature = (path, workers=1))]
fn run_scenario(py: Python<'_>, path: &str, workers: usize) -> PyResult<Py<PyAny>> {
    let prepared = Scenario::load(path).map_err(to_py)?;
    let mut rows = Vec::new();
    for r in prepared.run_sweep(workers).map_err(to_py)? {
        let r = r.map_err(to_py)?;
        rows.push(serde_json::json!({ "cell": r.cell, "report": r.report }));
    }
    to_json_value(py, &rows)
}

#[pymodule]
fn ridepool_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRoadNetwork>()?;
    m.add_function(wrap_pyfunction!(solve_assignment, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_two_zone, m)?)?;
    m.add_function(wrap_pyfunction!(run_circular, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    Ok(())
}
