//! Python bindings: build the side-to-side case study, synthesize and verify
//! bundles, and run scenarios. Documents cross the boundary as TOML text.

use nalgebra::DVector;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;

use reachctl::case_study::{build_case_study, ManeuverParams};
use reachctl::executor::{run, schedule_of, Fallback, RcpPolicy, RunOptions, Scenario};
use reachctl::files::{to_toml, BundleFile, TriangulationFile};
use reachctl::geometry::{Point, Simplex, SimplexId};
use reachctl::synthesis::{ControlBounds, Objective, SynthesisOptions};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: DeserializeOwned>(text: &str) -> PyResult<T> {
    toml::from_str(text).map_err(err)
}

/// Triangulation file of the side-to-side maneuver, as TOML.
#[pyfunction]
fn case_study_triangulation() -> PyResult<String> {
    let cs = build_case_study(&ManeuverParams::side_to_side()).map_err(err)?;
    to_toml(&TriangulationFile::from_case_study(&cs)).map_err(err)
}

/// Synthesize the case-study bundle; returns it as TOML.
#[pyfunction]
#[pyo3(signature = (bounds=3.2, margin=1e-6, objective="max-slack"))]
fn synthesize_case_study(bounds: f64, margin: f64, objective: &str) -> PyResult<String> {
    let cs = build_case_study(&ManeuverParams::side_to_side()).map_err(err)?;
    let mut opts = SynthesisOptions::new(ControlBounds::symmetric(1, bounds).map_err(err)?);
    opts.margin = margin;
    opts.objective = objective.parse::<Objective>().map_err(err)?;
    let hc = cs.synthesize(&opts).map_err(err)?;
    to_toml(&BundleFile::from_controller(&hc, Default::default(), Some(cs.params.clone()), &cs.region.safe)).map_err(err)
}

/// Per-simplex checks of a bundle: (mode, simplex id, invariance residual, continuity mismatch, passed).
#[pyfunction]
fn verify(bundle: &str) -> PyResult<Vec<(String, u32, f64, f64, bool)>> {
    let file: BundleFile = parse(bundle)?;
    let hc = file.to_controller().map_err(err)?;
    let checks = hc.verify().map_err(err)?;
    Ok(checks.iter().map(|c| (c.mode.clone(), c.simplex.0, c.invariance_residual, c.continuity_mismatch, c.pass())).collect())
}

/// Run a scenario; returns a dict of columns (t, x, xdot, u) and summary figures.
#[pyfunction]
fn simulate<'py>(py: Python<'py>, bundle: &str, scenario: &str) -> PyResult<Bound<'py, PyDict>> {
    let file: BundleFile = parse(bundle)?;
    let hc = file.to_controller().map_err(err)?;
    let sc: Scenario = parse(scenario)?;
    let specs = file.params.clone().unwrap_or_else(ManeuverParams::side_to_side);
    let policy = RcpPolicy::new(&hc, Fallback::default());
    let log = run(&sc, &policy, &schedule_of(&hc).map_err(err)?, &specs, &RunOptions::default()).map_err(err)?;
    let sum = log.summary();
    let d = PyDict::new(py);
    d.set_item("t", log.samples.iter().map(|s| s.t).collect::<Vec<_>>())?;
    d.set_item("x", log.samples.iter().map(|s| s.state[0]).collect::<Vec<_>>())?;
    d.set_item("xdot", log.samples.iter().map(|s| s.state[1]).collect::<Vec<_>>())?;
    d.set_item("u", log.samples.iter().map(|s| s.u[0]).collect::<Vec<_>>())?;
    d.set_item("crossings", sum.crossing_sequence.clone())?;
    d.set_item("t1_ok", sum.t1_ok)?;
    d.set_item("unsafe_samples", sum.unsafe_samples)?;
    d.set_item("unlive_samples", sum.unlive_samples)?;
    d.set_item("lost", sum.lost)?;
    Ok(d)
}

/// Affine interpolant u = K s + g through the given vertex controls; returns (K rows, g).
#[pyfunction]
fn affine_feedback(vertices: Vec<Vec<f64>>, controls: Vec<Vec<f64>>) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let s = Simplex::new(SimplexId(0), vertices.into_iter().map(Point::from_vec).collect()).map_err(err)?;
    let u: Vec<DVector<f64>> = controls.into_iter().map(DVector::from_vec).collect();
    let (k, g) = reachctl::synthesis::affine_feedback(&s, &u).map_err(err)?;
    let rows = (0..k.nrows()).map(|i| k.row(i).iter().copied().collect()).collect();
    Ok((rows, g.iter().copied().collect()))
}

/// Pitch angle (rad) that realises horizontal acceleration `u`.
#[pyfunction]
fn pitch_command(u: f64) -> f64 {
    reachctl::executor::pitch_command(u)
}

#[pymodule]
fn reachctl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(case_study_triangulation, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_case_study, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(affine_feedback, m)?)?;
    m.add_function(wrap_pyfunction!(pitch_command, m)?)?;
    Ok(())
}
