//! Python module `pwot`. Clouds are passed as lists of points (lists of
//! floats) with optional lists of weights; every input is centered and scaled
//! into the unit ball unless `normalize=False`.

use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use pw_core::barycenter::{
    interpolate as interpolate_core, solve_barycenter_with, BarycenterConfig, BarycenterProblem, BarycenterState,
    WeightOptConfig,
};
use pw_core::clustering::{
    adjusted_rand_index as ari, normalized_mutual_info as nmi, pw_kmeans, ClusterMetric, ClusteringConfig,
};
use pw_core::init::{InitKind, InitStrategy};
use pw_core::measure::{normalize, DiscreteMeasure};
use pw_core::pw::{pw_distance, CouplingSolver, PwStopRule};
use pw_core::transport::SinkhornConfig;

fn py_err(e: pw_core::Error) -> PyErr {
    if e.is_non_convergence() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn measure(points: Vec<Vec<f64>>, weights: Option<Vec<f64>>, scale: bool) -> PyResult<DiscreteMeasure> {
    let d = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != d) {
        return Err(PyValueError::new_err(
            "all points must have the same number of coordinates",
        ));
    }
    let n = points.len();
    let support = Array2::from_shape_vec((n, d), points.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let m = match weights {
        Some(w) => DiscreteMeasure::from_masses(support, Array1::from(w)),
        None => DiscreteMeasure::uniform(support),
    }
    .map_err(py_err)?;
    if scale {
        normalize(&m).map_err(py_err)
    } else {
        Ok(m)
    }
}

fn strategy(init: &str, knn_k: usize) -> PyResult<InitStrategy> {
    let kind: InitKind = init.parse().map_err(py_err)?;
    Ok(InitStrategy::new(kind).with_knn_k(knn_k))
}

#[pyclass(get_all, frozen)]
pub struct Alignment {
    cost: f64,
    distance: f64,
    iterations: usize,
    converged: bool,
    /// Orthogonal map `P` with `‖x_i − y_j P‖²` as the aligned cost.
    map: Vec<Vec<f64>>,
    plan: Vec<Vec<f64>>,
    objective_trace: Vec<f64>,
}

#[pyclass(get_all, frozen)]
pub struct Barycenter {
    support: Vec<Vec<f64>>,
    weights: Vec<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
    objective_trace: Vec<f64>,
}

impl From<BarycenterState> for Barycenter {
    fn from(s: BarycenterState) -> Self {
        Self {
            support: rows(&s.support),
            weights: s.weights.to_vec(),
            objective: s.objective,
            iterations: s.iterations,
            converged: s.converged,
            objective_trace: s.objective_trace,
        }
    }
}

#[pyclass(get_all, frozen)]
pub struct Clustering {
    labels: Vec<usize>,
    centroids: Vec<Vec<Vec<f64>>>,
    distortion_trace: Vec<f64>,
    rounds: usize,
    converged: bool,
}

/// Aligns `b` onto `a` and returns the squared distance, map and plan.
#[pyfunction]
#[pyo3(signature = (a, b, a_weights=None, b_weights=None, init="fiedler", knn_k=10, tol=1e-8, max_iters=200, normalize=true))]
#[allow(clippy::too_many_arguments)]
fn distance(
    py: Python<'_>,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    a_weights: Option<Vec<f64>>,
    b_weights: Option<Vec<f64>>,
    init: &str,
    knn_k: usize,
    tol: f64,
    max_iters: usize,
    normalize: bool,
) -> PyResult<Alignment> {
    let a = measure(a, a_weights, normalize)?;
    let b = measure(b, b_weights, normalize)?;
    let init = strategy(init, knn_k)?;
    let stop = PwStopRule {
        rel_tol: tol,
        max_iters,
    };
    let sol = py.detach(|| pw_distance(&a, &b, &init, &stop)).map_err(py_err)?;
    Ok(Alignment {
        cost: sol.cost,
        distance: sol.distance,
        iterations: sol.iterations,
        converged: sol.converged,
        map: rows(sol.map.matrix()),
        plan: rows(sol.plan.coupling()),
        objective_trace: sol.objective_trace,
    })
}

fn config(
    init: &str,
    knn_k: usize,
    epsilon: f64,
    max_iters: usize,
    optimize_weights: bool,
) -> PyResult<BarycenterConfig> {
    let mut cfg = BarycenterConfig {
        init: strategy(init, knn_k)?,
        weight_opt: optimize_weights.then(WeightOptConfig::default),
        ..BarycenterConfig::default()
    };
    cfg.stop.max_iters = max_iters;
    if epsilon > 0.0 {
        cfg.solver = CouplingSolver::Entropic(SinkhornConfig::new(epsilon));
    } else if epsilon < 0.0 {
        return Err(PyValueError::new_err("epsilon must be non-negative"));
    }
    Ok(cfg)
}

/// Free-support barycenter of `clouds` with weights `lambdas` (uniform by
/// default). `epsilon > 0` replaces exact transport by Sinkhorn.
#[pyfunction]
#[pyo3(signature = (clouds, lambdas=None, size=None, epsilon=0.0, optimize_weights=false, init="fiedler", knn_k=10, max_iters=200, seed=0))]
#[allow(clippy::too_many_arguments)]
fn barycenter(
    py: Python<'_>,
    clouds: Vec<Vec<Vec<f64>>>,
    lambdas: Option<Vec<f64>>,
    size: Option<usize>,
    epsilon: f64,
    optimize_weights: bool,
    init: &str,
    knn_k: usize,
    max_iters: usize,
    seed: u64,
) -> PyResult<Barycenter> {
    let inputs = clouds
        .into_iter()
        .map(|c| measure(c, None, true))
        .collect::<PyResult<Vec<_>>>()?;
    let Some(first) = inputs.first() else {
        return Err(PyValueError::new_err("at least one cloud is needed"));
    };
    let size = size.unwrap_or(first.len());
    let mut problem = BarycenterProblem::new(inputs, size).with_seed(seed);
    if let Some(l) = lambdas {
        problem = problem.with_lambdas(Array1::from(l));
    }
    let cfg = config(init, knn_k, epsilon, max_iters, optimize_weights)?;
    let state = py.detach(|| solve_barycenter_with(&problem, &cfg)).map_err(py_err)?;
    Ok(state.into())
}

/// Barycenters of `(a, b)` with weights `(1 − η, η)` for each η (ascending).
#[pyfunction]
#[pyo3(signature = (a, b, etas, size=None, epsilon=0.0, init="fiedler", knn_k=10, max_iters=200, seed=0))]
#[allow(clippy::too_many_arguments)]
fn interpolate(
    py: Python<'_>,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    etas: Vec<f64>,
    size: Option<usize>,
    epsilon: f64,
    init: &str,
    knn_k: usize,
    max_iters: usize,
    seed: u64,
) -> PyResult<Vec<Barycenter>> {
    let a = measure(a, None, true)?;
    let b = measure(b, None, true)?;
    let cfg = config(init, knn_k, epsilon, max_iters, false)?;
    let size = size.unwrap_or(a.len());
    let states = py
        .detach(|| interpolate_core(&a, &b, &etas, size, &cfg, seed))
        .map_err(py_err)?;
    Ok(states.into_iter().map(Barycenter::from).collect())
}

/// k-means over clouds under `metric` (pw, emd, euc-gw, geo-gw).
#[pyfunction]
#[pyo3(signature = (clouds, k, metric="pw", centroid_size=50, max_rounds=20, seed=0))]
fn cluster(
    py: Python<'_>,
    clouds: Vec<Vec<Vec<f64>>>,
    k: usize,
    metric: &str,
    centroid_size: usize,
    max_rounds: usize,
    seed: u64,
) -> PyResult<Clustering> {
    let clouds = clouds
        .into_iter()
        .map(|c| measure(c, None, true))
        .collect::<PyResult<Vec<_>>>()?;
    let metric: ClusterMetric = metric.parse().map_err(py_err)?;
    let mut cfg = ClusteringConfig::new(k, metric);
    cfg.centroid_size = centroid_size;
    cfg.max_rounds = max_rounds;
    cfg.rng_seed = seed;
    let result = py.detach(|| pw_kmeans(&clouds, &cfg)).map_err(py_err)?;
    Ok(Clustering {
        labels: result.labels,
        centroids: result.centroids.iter().map(|c| rows(&c.support().to_owned())).collect(),
        distortion_trace: result.distortion_trace,
        rounds: result.rounds,
        converged: result.converged,
    })
}

#[pyfunction]
fn adjusted_rand_index(a: Vec<usize>, b: Vec<usize>) -> PyResult<f64> {
    ari(&a, &b).map_err(py_err)
}

#[pyfunction]
fn normalized_mutual_info(a: Vec<usize>, b: Vec<usize>) -> PyResult<f64> {
    nmi(&a, &b).map_err(py_err)
}

/// Reads a cloud file (xyz, csv, ply or pgm); returns `(points, weights)`.
#[pyfunction]
#[pyo3(signature = (path, normalize=true))]
fn read_cloud(path: std::path::PathBuf, normalize: bool) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let format = pw_core::io::CloudFormat::from_path(&path).map_err(py_err)?;
    let opts = pw_core::io::ReadOptions {
        normalize,
        ..Default::default()
    };
    let m = pw_core::io::read_cloud_with(&path, format, &opts).map_err(py_err)?;
    Ok((rows(&m.support().to_owned()), m.weights().to_vec()))
}

#[pymodule]
fn pwot(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Alignment>()?;
    m.add_class::<Barycenter>()?;
    m.add_class::<Clustering>()?;
    m.add_function(wrap_pyfunction!(distance, m)?)?;
    m.add_function(wrap_pyfunction!(barycenter, m)?)?;
    m.add_function(wrap_pyfunction!(interpolate, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(adjusted_rand_index, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_mutual_info, m)?)?;
    m.add_function(wrap_pyfunction!(read_cloud, m)?)?;
    Ok(())
}
