//! Python bindings. Scenarios, environments and reports cross the boundary
//! as JSON strings in the same formats the CLI reads and writes.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use trafficrules::cli::load_policy;
use trafficrules::env::{Environment, VisibilityGraph};
use trafficrules::scenario::{self, GenConfig, PreparedScenario, Scenario, SimOptions};
use trafficrules::training::{self, evaluate};
use trafficrules::Vec2;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn gen_scenarios(seed: u64, count: usize, first_index: u64, size: Option<usize>) -> Result<Vec<String>, String> {
    let mut cfg = GenConfig::default();
    if let Some(s) = size {
        cfg.min_size = s;
        cfg.max_size = s;
    }
    let out = scenario::generate_scenarios(&cfg, seed, count, first_index).map_err(|e| e.to_string())?;
    Ok(out.iter().map(Scenario::to_json).collect())
}

fn prepare(json: &str) -> Result<PreparedScenario, String> {
    let s = Scenario::from_json(json).map_err(|e| e.to_string())?;
    PreparedScenario::new(s).map_err(|e| e.to_string())
}

fn eval_report(
    scenarios: &[String],
    policies: &[String],
    runs: usize,
    seed: u64,
    horizon: Option<usize>,
) -> Result<String, String> {
    let testset = scenarios.iter().map(|s| prepare(s)).collect::<Result<Vec<_>, _>>()?;
    let policies = policies.iter().map(|p| load_policy(p).map_err(|e| e.to_string())).collect::<Result<Vec<_>, _>>()?;
    let opts = SimOptions { horizon, ..SimOptions::default() };
    let rep = evaluate(&policies, &testset, runs, seed, opts).map_err(|e| e.to_string())?;
    Ok(rep.to_json())
}

fn sd(env_json: &str, r: f64, p: (f64, f64), q: (f64, f64)) -> Result<f64, String> {
    let env = Environment::from_json(env_json).map_err(|e| e.to_string())?;
    let vg = VisibilityGraph::build(&env, r).map_err(|e| e.to_string())?;
    vg.shortest_distance(Vec2::new(p.0, p.1), Vec2::new(q.0, q.1)).map_err(|e| e.to_string())
}

/// Generates `count` scenarios as JSON strings; `size` fixes the map side.
#[pyfunction]
#[pyo3(signature = (seed, count, first_index = 0, size = None))]
fn generate(seed: u64, count: usize, first_index: u64, size: Option<usize>) -> PyResult<Vec<String>> {
    gen_scenarios(seed, count, first_index, size).map_err(err)
}

#[pyfunction]
fn crossing_fixture() -> String {
    scenario::crossing_fixture().to_json()
}

/// Evaluates each policy (`expert`, `baseline` or a checkpoint path) and
/// returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (scenarios, policies, runs = 10, seed = 0, horizon = None))]
fn evaluate_policies(
    py: Python<'_>,
    scenarios: Vec<String>,
    policies: Vec<String>,
    runs: usize,
    seed: u64,
    horizon: Option<usize>,
) -> PyResult<String> {
    py.detach(|| eval_report(&scenarios, &policies, runs, seed, horizon)).map_err(err)
}

#[pyfunction]
fn shortest_distance(env_json: &str, r: f64, p: (f64, f64), q: (f64, f64)) -> PyResult<f64> {
    sd(env_json, r, p, q).map_err(err)
}

/// Soft-min of travel fractions; `alpha = float("inf")` gives the minimum.
#[pyfunction]
fn reward(fractions: Vec<f64>, alpha: f64) -> PyResult<f64> {
    scenario::reward(&fractions, alpha).map_err(err)
}

#[pyfunction]
fn shaped_utilities(rewards: Vec<f64>) -> PyResult<Vec<f64>> {
    training::shaped_utilities(&rewards).map_err(err)
}

#[pymodule]
fn pytrafficrules(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(crossing_fixture, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_policies, m)?)?;
    m.add_function(wrap_pyfunction!(shortest_distance, m)?)?;
    m.add_function(wrap_pyfunction!(reward, m)?)?;
    m.add_function(wrap_pyfunction!(shaped_utilities, m)?)?;
    Ok(())
}
