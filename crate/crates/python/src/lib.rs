//! Python bindings: angular operators, the conditioning sweep, the gradient
//! check matrix and config-driven training.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ::spherenet::angular::{self, AngularOperator};
use ::spherenet::conditioning::{sweep, SweepConfig};
use ::spherenet::error::Error;
use ::spherenet::experiment::{self, config, GradcheckConfig, RunOptions, TrainConfig};

fn to_py(e: Error) -> PyErr {
    match experiment::exit_code(&e) {
        2 => PyValueError::new_err(e.to_string()),
        3 => PyArithmeticError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn operator(name: &str, k: Option<f64>) -> PyResult<AngularOperator> {
    match (name, k) {
        ("linear", None) => Ok(AngularOperator::linear()),
        ("cosine", None) => Ok(AngularOperator::Cosine),
        ("sigmoid", Some(k)) => AngularOperator::sigmoid(k).map_err(to_py),
        ("sigmoid", None) => Err(PyValueError::new_err("the sigmoid operator needs k")),
        (_, Some(_)) if name == "linear" || name == "cosine" => {
            Err(PyValueError::new_err(format!("{name} takes no k")))
        }
        _ => Err(PyValueError::new_err(format!(
            "unknown operator {name:?} (linear, cosine, sigmoid)"
        ))),
    }
}

/// Angle between two vectors, in (0, π).
#[pyfunction]
fn angle(w: Vec<f64>, x: Vec<f64>) -> PyResult<f64> {
    if w.len() != x.len() {
        return Err(PyValueError::new_err("vectors differ in length"));
    }
    Ok(angular::angle(&w, &x))
}

/// g(θ) for the named operator.
#[pyfunction]
#[pyo3(signature = (op, theta, k=None))]
fn g(op: &str, theta: f64, k: Option<f64>) -> PyResult<f64> {
    Ok(operator(op, k)?.g(theta, 0))
}

/// ψ(θ), the monotone margin extension of g(mθ).
#[pyfunction]
#[pyo3(signature = (op, theta, m, k=None))]
fn psi(op: &str, theta: f64, m: u32, k: Option<f64>) -> PyResult<f64> {
    if m == 0 {
        return Err(PyValueError::new_err("margin m must be at least 1"));
    }
    Ok(operator(op, k)?.psi(theta, m, 0))
}

/// Condition numbers of the unconstrained factorization Hessian at scaled
/// balanced optima, with the pooled log-log slope against c.
#[pyfunction]
#[pyo3(signature = (n=8, m=8, k=2, c_list=vec![1.0, 2.0, 4.0, 8.0], seeds=(0..10).collect()))]
fn conditioning<'py>(
    py: Python<'py>,
    n: usize,
    m: usize,
    k: usize,
    c_list: Vec<f64>,
    seeds: Vec<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let res = sweep(&SweepConfig {
        n,
        m,
        k,
        c_list,
        seeds,
    })
    .map_err(to_py)?;
    let rows = res
        .rows
        .iter()
        .map(|(seed, r)| {
            let d = PyDict::new(py);
            d.set_item("seed", seed)?;
            d.set_item("c", r.c)?;
            d.set_item("kappa_g", r.kappa_g)?;
            d.set_item("lambda_max_g", r.lambda_max_g)?;
            d.set_item("lambda_min_nz_g", r.lambda_min_nz_g)?;
            d.set_item("spectrum_gs_maxdiff", r.spectrum_gs_maxdiff)?;
            d.set_item("trace_identity_err", r.trace_identity_err)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let out = PyDict::new(py);
    out.set_item("slope", res.slope)?;
    out.set_item("per_seed_slopes", res.per_seed_slopes.clone())?;
    out.set_item("rows", rows)?;
    Ok(out)
}

/// Runs the gradient-check matrix described by a TOML string (empty for
/// the defaults) and returns one record per cell without raising on
/// failures.
#[pyfunction]
#[pyo3(signature = (config_toml=""))]
fn gradcheck<'py>(py: Python<'py>, config_toml: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg: GradcheckConfig = config::parse(config_toml).map_err(to_py)?;
    config::Validate::validate(&cfg).map_err(to_py)?;
    experiment::matrix(&cfg)
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let r = experiment::check_cell(&cfg, cell, cfg.seed.wrapping_add(i as u64)).map_err(to_py)?;
            let d = PyDict::new(py);
            d.set_item("cell", cell.name())?;
            d.set_item("max_rel_err", r.max_rel_err)?;
            d.set_item("worst_block", r.worst_block)?;
            d.set_item("checked", r.checked)?;
            d.set_item("skipped", r.skipped)?;
            d.set_item("pass", r.pass)?;
            Ok(d)
        })
        .collect()
}

/// Trains from a TOML config string (or `preset:<name>`), writing metrics
/// under `out_dir`.
#[pyfunction]
#[pyo3(signature = (config_toml, out_dir, seed=None, deterministic=false, data_dir=None))]
fn train<'py>(
    py: Python<'py>,
    config_toml: &str,
    out_dir: PathBuf,
    seed: Option<u64>,
    deterministic: bool,
    data_dir: Option<PathBuf>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let text = if config_toml.starts_with("preset:") {
        config::config_text(config_toml).map_err(to_py)?
    } else {
        config_toml.to_string()
    };
    let cfg: TrainConfig = config::parse(&text).map_err(to_py)?;
    let opts = RunOptions {
        seed,
        out_dir,
        deterministic,
        data_dir,
    };
    let runs = py.detach(|| experiment::cmd_train(&cfg, &opts)).map_err(to_py)?;
    runs.into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("cell", r.cell)?;
            d.set_item("variant", r.variant)?;
            d.set_item("metrics", r.metrics)?;
            d.set_item("final_train_loss", r.final_train_loss)?;
            d.set_item("final_train_acc", r.final_train_acc)?;
            d.set_item("final_test_acc", r.final_test_acc)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn spherenet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(angle, m)?)?;
    m.add_function(wrap_pyfunction!(g, m)?)?;
    m.add_function(wrap_pyfunction!(psi, m)?)?;
    m.add_function(wrap_pyfunction!(conditioning, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    let presets: Vec<&str> = config::PRESETS.iter().map(|p| p.0).collect();
    m.add("PRESETS", presets)?;
    Ok(())
}
