//! Python bindings: the fermionic benchmark, the SVD and entropy solvers on
//! user-supplied matrices, and a few metrics.

use lininv::mem::{exp_mem_solve, mem_solve_direct, std_mem_solve, MemConfig};
use lininv::spectral::{self, ObjectKind, SpectralBenchmark};
use lininv::svd::tsvd_solve;
use lininv::{DataSet, DiscretizedProblem, IntegralConstraint, ObjectGrid, SupportInterval};
use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: lininv::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyfunction]
fn fermionic_kernel(x: f64, y: f64, beta: f64) -> PyResult<f64> {
    spectral::fermionic_kernel(x, y, beta).map_err(py_err)
}

/// Noisy benchmark data and the true object as a dict.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (beta=10.0, ntau=25, grid=(-5.0, 5.0, 201), noise=0.0, seed=0, half_gap=None, support=None))]
fn generate_benchmark<'py>(
    py: Python<'py>,
    beta: f64,
    ntau: usize,
    grid: (f64, f64, usize),
    noise: f64,
    seed: u64,
    half_gap: Option<f64>,
    support: Option<(f64, f64)>,
) -> PyResult<Bound<'py, PyDict>> {
    let grid = ObjectGrid::new(grid.0, grid.1, grid.2).map_err(py_err)?;
    let support = support
        .map(|(lo, hi)| SupportInterval::new(lo, hi))
        .transpose()
        .map_err(py_err)?;
    let bench = SpectralBenchmark {
        beta,
        ntau,
        grid,
        object: half_gap.map_or(ObjectKind::TwoGaussian, |half_gap| ObjectKind::DeltaPair { half_gap }),
        noise_level: noise,
        seed,
        support,
    };
    let g = spectral::generate_benchmark(&bench).map_err(py_err)?;
    let d = g.problem.data();
    let out = PyDict::new(py);
    out.set_item("x", g.problem.grid().points().to_vec())?;
    out.set_item("y", d.y().to_vec())?;
    out.set_item("g_true", g.clean.clone())?;
    out.set_item("g_noisy", d.values().to_vec())?;
    out.set_item("sigma", d.sigmas().to_vec())?;
    out.set_item("a_true", g.truth.sampled().map(<[f64]>::to_vec))?;
    out.set_item("normalization", g.normalization)?;
    out.set_item("sum_rule", g.sum_rule)?;
    out.set_item(
        "kmatrix",
        g.problem.kmatrix().row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
    )?;
    Ok(out)
}

fn problem_from(
    kmatrix: Vec<Vec<f64>>,
    y: Vec<f64>,
    values: Vec<f64>,
    sigmas: Vec<f64>,
    grid: (f64, f64, usize),
) -> PyResult<DiscretizedProblem> {
    let rows = kmatrix.len();
    let cols = kmatrix.first().map_or(0, Vec::len);
    if kmatrix.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("kmatrix rows differ in length"));
    }
    let k = DMatrix::from_fn(rows, cols, |i, j| kmatrix[i][j]);
    let grid = ObjectGrid::new(grid.0, grid.1, grid.2).map_err(py_err)?;
    let data = DataSet::new(y, values, sigmas).map_err(py_err)?;
    DiscretizedProblem::from_matrix(grid, data, k).map_err(py_err)
}

/// Truncated SVD of `K A = G̃`; `cutoff=None` derives the cut-off from the
/// relative errors, `cutoff=0` keeps every term.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (kmatrix, y, values, sigmas, grid, cutoff=None, rank_tol=1e-10))]
fn tsvd<'py>(
    py: Python<'py>,
    kmatrix: Vec<Vec<f64>>,
    y: Vec<f64>,
    values: Vec<f64>,
    sigmas: Vec<f64>,
    grid: (f64, f64, usize),
    cutoff: Option<f64>,
    rank_tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let p = problem_from(kmatrix, y, values, sigmas, grid)?;
    let s = tsvd_solve(&p, rank_tol, cutoff).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("object", s.object)?;
    out.set_item("r_cut", s.r_cut)?;
    out.set_item("threshold", s.threshold)?;
    out.set_item("lambdas", s.system.lambdas().to_vec())?;
    Ok(out)
}

/// Entropy solve with default model `model`. `constraints` is a list of
/// `(weights_on_grid, target)` pairs enforced by penalty.
#[pyfunction]
#[pyo3(signature = (kmatrix, y, values, sigmas, grid, model, alpha=1.0, variant="std", constraints=vec![], xi=0.1, max_iters=500))]
#[allow(clippy::too_many_arguments)]
fn mem<'py>(
    py: Python<'py>,
    kmatrix: Vec<Vec<f64>>,
    y: Vec<f64>,
    values: Vec<f64>,
    sigmas: Vec<f64>,
    grid: (f64, f64, usize),
    model: Vec<f64>,
    alpha: f64,
    variant: &str,
    constraints: Vec<(Vec<f64>, f64)>,
    xi: f64,
    max_iters: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let mut p = problem_from(kmatrix, y, values, sigmas, grid)?;
    let points = p.grid().points().to_vec();
    for (k, (w, c)) in constraints.into_iter().enumerate() {
        if w.len() != points.len() {
            return Err(PyValueError::new_err(format!("constraint {k}: weights must have one value per grid point")));
        }
        let a = points[0];
        let dx = p.grid().dx();
        let weight = move |x: f64| w[(((x - a) / dx).round() as usize).min(w.len() - 1)];
        p = p.with_integral_constraint(IntegralConstraint::new(format!("c{k}"), weight, c));
    }
    let cfg = MemConfig {
        alpha,
        xi,
        max_iters,
        ..MemConfig::default()
    };
    let sol = match variant {
        "std" => std_mem_solve(&p, &model, &cfg),
        "direct" => mem_solve_direct(&p, &model, &cfg),
        "exp" => exp_mem_solve(&p, &model, &cfg),
        other => return Err(PyValueError::new_err(format!("unknown variant '{other}'; use std, direct or exp"))),
    }
    .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("object", sol.object)?;
    out.set_item("f_value", sol.f_value)?;
    out.set_item("iterations", sol.iterations)?;
    out.set_item("converged", sol.converged)?;
    Ok(out)
}

#[pyfunction]
fn rmse(a: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    lininv::rmse(&a, &reference).map_err(py_err)
}

#[pyfunction]
fn overlap(a: Vec<f64>, m: Vec<f64>) -> PyResult<f64> {
    lininv::mem::overlap(&a, &m).map_err(py_err)
}

#[pyfunction]
fn detect_peaks(a: Vec<f64>, prominence: f64) -> Vec<usize> {
    spectral::detect_peaks(&a, prominence)
}

#[pymodule]
fn lininv_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(fermionic_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(generate_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(tsvd, m)?)?;
    m.add_function(wrap_pyfunction!(mem, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(overlap, m)?)?;
    m.add_function(wrap_pyfunction!(detect_peaks, m)?)?;
    Ok(())
}
