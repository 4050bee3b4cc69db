//! Python bindings for the exact and sampled random-MPS quantities.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rmps_core::experiments::{self, ExperimentKind, ExperimentSpec};
use rmps_core::haar::RngStream;
use rmps_core::mps::{sample_rmps, RmpsEnsembleConfig};
use rmps_core::statmech::{self, Observable, SpinChainPattern};
use rmps_core::tensor::C64;
use rmps_core::{weingarten, LabError};

fn py_err(e: LabError) -> PyErr {
    match e {
        LabError::GapConditionFailed { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// `(eta(d, D), eta(D, d))`.
#[pyfunction]
fn eta(d: usize, bond_dim: usize) -> PyResult<(f64, f64)> {
    let (x, y) = (d as f64, bond_dim as f64);
    Ok((statmech::eta(x, y).map_err(py_err)?, statmech::eta(y, x).map_err(py_err)?))
}

#[pyfunction]
fn alpha(d: usize, bond_dim: usize) -> f64 {
    statmech::alpha(d, bond_dim)
}

#[pyfunction]
fn norm_second_moment(d: usize, n: usize, bond_dim: usize) -> PyResult<f64> {
    statmech::norm_second_moment(d, n, bond_dim).map_err(py_err)
}

/// Same quantity from the brute-force Weingarten contraction.
#[pyfunction]
fn oracle_norm_second_moment(d: usize, n: usize, bond_dim: usize) -> PyResult<f64> {
    let pattern = SpinChainPattern::all_blue(n).map_err(py_err)?;
    weingarten::oracle_second_moment(&pattern, d, bond_dim).map_err(py_err)
}

/// `(value, bound)` for a contiguous block of `l` sites.
#[pyfunction]
fn connected_purity(d: usize, n: usize, bond_dim: usize, l: usize) -> PyResult<(f64, f64)> {
    let v = statmech::connected_purity_expectation(d, n, bond_dim, l).map_err(py_err)?;
    Ok((v, statmech::connected_purity_bound(d, n, bond_dim, l)))
}

/// `(value, bound)` for every k-th block.
#[pyfunction]
fn disconnected_purity(d: usize, n: usize, bond_dim: usize, k: usize) -> PyResult<(f64, f64)> {
    let v = statmech::disconnected_purity_expectation(d, n, bond_dim, k).map_err(py_err)?;
    Ok((v, statmech::extensivity_purity_bound(d, n, bond_dim, k).map_err(py_err)?))
}

/// `(exact, bound)`; without `re` the observable is Pauli-Z (d = 2) or diag(1, -1, 0, ...).
#[pyfunction]
#[pyo3(signature = (d, n, bond_dim, re=None, im=None))]
fn local_obs_second_moment(d: usize, n: usize, bond_dim: usize, re: Option<Vec<Vec<f64>>>, im: Option<Vec<Vec<f64>>>) -> PyResult<(f64, f64)> {
    let o = match re {
        Some(re) => Observable::from_rows(&re, im.as_deref()).map_err(py_err)?,
        None if d == 2 => Observable::pauli_z(),
        None => Observable::traceless_z(d),
    };
    let m = statmech::local_observable_second_moment(d, n, bond_dim, &o).map_err(py_err)?;
    Ok((m.exact, m.bound))
}

/// `(F_2, Haar value)`.
#[pyfunction]
fn frame_potential(d: usize, n: usize, bond_dim: usize) -> PyResult<(f64, f64)> {
    Ok((statmech::frame_potential_2(d, n, bond_dim).map_err(py_err)?, statmech::haar_frame_potential(d, n)))
}

#[pyfunction]
fn design_distance_sq(d: usize, n: usize, bond_dim: usize) -> PyResult<f64> {
    statmech::design_distance_sq(d, n, bond_dim).map_err(py_err)
}

/// Dense amplitudes of sample `index` from stream `seed` (periodic ring).
#[pyfunction]
#[pyo3(signature = (d, n, bond_dim, seed, index=0))]
fn sample_state(d: usize, n: usize, bond_dim: usize, seed: u64, index: u64) -> PyResult<Vec<C64>> {
    let cfg = RmpsEnsembleConfig::periodic(d, n, bond_dim).map_err(py_err)?;
    sample_rmps(&cfg, RngStream::new(seed, index)).and_then(|s| s.materialize()).map_err(py_err)
}

/// Runs an experiment and returns the report as a JSON string.
#[pyfunction]
#[pyo3(signature = (kind, d, n, bond_dim, samples, seed, k=None, l=None, epsilon=None))]
#[allow(clippy::too_many_arguments)]
fn run_experiment(
    py: Python<'_>,
    kind: &str,
    d: usize,
    n: usize,
    bond_dim: usize,
    samples: usize,
    seed: u64,
    k: Option<usize>,
    l: Option<usize>,
    epsilon: Option<f64>,
) -> PyResult<String> {
    let kind = ExperimentKind::from_name(kind).ok_or_else(|| PyValueError::new_err(format!("unknown experiment kind `{kind}`")))?;
    let mut spec = ExperimentSpec::new(kind, d, n, bond_dim, samples, seed);
    if d == 2 {
        spec.observable = Observable::pauli_z();
    }
    spec.k = k;
    spec.l = l;
    spec.epsilon = epsilon;
    let report = py.detach(|| experiments::run_experiment(&spec)).map_err(py_err)?;
    report.to_json().map_err(py_err)
}

#[pymodule]
fn rmps_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(eta, m)?)?;
    m.add_function(wrap_pyfunction!(alpha, m)?)?;
    m.add_function(wrap_pyfunction!(norm_second_moment, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_norm_second_moment, m)?)?;
    m.add_function(wrap_pyfunction!(connected_purity, m)?)?;
    m.add_function(wrap_pyfunction!(disconnected_purity, m)?)?;
    m.add_function(wrap_pyfunction!(local_obs_second_moment, m)?)?;
    m.add_function(wrap_pyfunction!(frame_potential, m)?)?;
    m.add_function(wrap_pyfunction!(design_distance_sq, m)?)?;
    m.add_function(wrap_pyfunction!(sample_state, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
