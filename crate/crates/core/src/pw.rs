//! The Procrustes-Wasserstein problem: rotation-aware transport between two
//! point clouds, solved by alternating an orthogonal Procrustes step with an
//! optimal transport step.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::init::{initial_plan, InitStrategy};
use crate::linalg;
use crate::measure::DiscreteMeasure;
use crate::transport::{
    sinkhorn, solve_emd_with, CostMatrix, DualPotentials, EmdConfig, SinkhornConfig, TransportPlan,
};

const SVD_TOL: f64 = 1e-12;
const ORTHO_TOL: f64 = 1e-9;

/// An element of O(d); reflections are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalMap(Array2<f64>);

impl OrthogonalMap {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch("orthogonal map must be square".into()));
        }
        let defect = linalg::orthogonality_defect(&matrix);
        if defect > ORTHO_TOL {
            return Err(Error::InvalidArgument(format!(
                "matrix is not orthogonal (defect {defect:e})"
            )));
        }
        Ok(Self(matrix))
    }

    pub fn identity(d: usize) -> Self {
        Self(Array2::eye(d))
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn determinant(&self) -> f64 {
        linalg::determinant(&self.0)
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.t().to_owned())
    }
}

/// Stopping rule for the alternating solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PwStopRule {
    /// Stop once `(previous − current) ≤ rel_tol · previous`.
    pub rel_tol: f64,
    pub max_iters: usize,
}

impl Default for PwStopRule {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            max_iters: 200,
        }
    }
}

impl PwStopRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidArgument("rel_tol must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        Ok(())
    }

    pub(crate) fn is_converged(&self, previous: f64, current: f64) -> bool {
        previous - current <= self.rel_tol * previous.abs()
    }
}

/// How the coupling step is solved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CouplingSolver {
    Exact(EmdConfig),
    Entropic(SinkhornConfig),
}

impl Default for CouplingSolver {
    fn default() -> Self {
        CouplingSolver::Exact(EmdConfig::default())
    }
}

/// A coupling step result.
#[derive(Debug, Clone)]
pub struct CouplingStep {
    pub plan: TransportPlan,
    /// `⟨C, Γ⟩`
    pub transport_cost: f64,
    /// Objective of the coupling problem (`⟨C, Γ⟩`, plus `ε·ΣΓlogΓ` when
    /// entropic).
    pub objective: f64,
    pub duals: Option<DualPotentials>,
}

impl CouplingSolver {
    pub fn solve(&self, cost: &CostMatrix, a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<CouplingStep> {
        match self {
            CouplingSolver::Exact(cfg) => {
                let s = solve_emd_with(cost, a.weights(), b.weights(), cfg)?;
                Ok(CouplingStep {
                    plan: s.plan,
                    transport_cost: s.cost,
                    objective: s.cost,
                    duals: Some(s.duals),
                })
            }
            CouplingSolver::Entropic(cfg) => {
                let s = sinkhorn(cost, a.weights(), b.weights(), cfg)?;
                Ok(CouplingStep {
                    plan: s.plan,
                    transport_cost: s.transport_cost,
                    objective: s.regularized_cost,
                    duals: None,
                })
            }
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match self {
            CouplingSolver::Exact(_) => None,
            CouplingSolver::Entropic(cfg) => Some(cfg.epsilon),
        }
    }
}

/// Result of an alignment.
#[derive(Debug, Clone)]
pub struct PwSolution {
    pub plan: TransportPlan,
    pub map: OrthogonalMap,
    /// `⟨C_P, Γ⟩`, the squared PW value for the exact solver.
    pub cost: f64,
    pub distance: f64,
    /// Objective after every coupling step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Dual potentials of the final exact transport step.
    pub duals: Option<DualPotentials>,
}

impl PwSolution {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&self.cost)
    }

    /// Largest increase between consecutive objective values (≤ 0 for a
    /// monotone trace).
    pub fn max_trace_increase(&self) -> f64 {
        max_increase(&self.objective_trace)
    }
}

pub(crate) fn max_increase(trace: &[f64]) -> f64 {
    trace.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
}

fn check_same_dim(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "measures live in dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `C_ij = ‖x_i − y_j P‖²`.
pub fn cost_with_map(a: &DiscreteMeasure, b: &DiscreteMeasure, map: &OrthogonalMap) -> Result<CostMatrix> {
    check_same_dim(a, b)?;
    if map.dim() != a.dim() {
        return Err(Error::DimensionMismatch(format!(
            "map of order {} for dimension {}",
            map.dim(),
            a.dim()
        )));
    }
    let rotated = b.support().dot(map.matrix());
    CostMatrix::squared_euclidean(a.support(), rotated.view())
}

/// The two pieces of `⟨C_P, Γ⟩ = ⟨u, p⟩ + ⟨v, q⟩ − 2⟨X Pᵀ Yᵀ, Γ⟩`: the
/// marginal term and the bilinear correlation `⟨X Pᵀ Yᵀ, Γ⟩`.
pub fn cost_decomposition(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    map: &OrthogonalMap,
    plan: &TransportPlan,
) -> Result<(f64, f64)> {
    check_same_dim(a, b)?;
    let marginal = a.squared_norms().dot(&plan.row_marginal()) + b.squared_norms().dot(&plan.col_marginal());
    let cross = a.support().dot(&map.matrix().t()).dot(&b.support().t());
    let correlation = (&cross * plan.coupling()).sum();
    Ok((marginal, correlation))
}

/// `Yᵀ Γᵀ X`, the d×d cross-covariance maximized by the Procrustes step.
pub fn cross_covariance(a: &DiscreteMeasure, b: &DiscreteMeasure, plan: &TransportPlan) -> Result<Array2<f64>> {
    check_same_dim(a, b)?;
    if plan.dim() != (a.len(), b.len()) {
        return Err(Error::DimensionMismatch(format!(
            "plan is {:?}, measures have {} and {} points",
            plan.dim(),
            a.len(),
            b.len()
        )));
    }
    Ok(b.support().t().dot(&plan.coupling().t()).dot(&a.support()))
}

/// Best orthogonal map for a fixed plan: `P = U Vᵀ` from the SVD of
/// `Yᵀ Γᵀ X`. Reflections (`det P = −1`) are kept.
pub fn procrustes_step(a: &DiscreteMeasure, b: &DiscreteMeasure, plan: &TransportPlan) -> Result<OrthogonalMap> {
    let m = cross_covariance(a, b, plan)?;
    let svd = linalg::jacobi_svd(&m, SVD_TOL)?;
    Ok(OrthogonalMap(svd.u.dot(&svd.v.t())))
}

fn check_plan(a: &DiscreteMeasure, b: &DiscreteMeasure, plan: &TransportPlan) -> Result<()> {
    if plan.dim() != (a.len(), b.len()) {
        return Err(Error::DimensionMismatch(format!(
            "initial plan is {:?}, measures have {} and {} points",
            plan.dim(),
            a.len(),
            b.len()
        )));
    }
    let rows = plan.coupling().sum_axis(ndarray::Axis(1));
    let cols = plan.coupling().sum_axis(ndarray::Axis(0));
    let defect = (&rows - &a.weights())
        .mapv(f64::abs)
        .iter()
        .chain((&cols - &b.weights()).mapv(f64::abs).iter())
        .cloned()
        .fold(0.0, f64::max);
    if defect > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "initial plan is not feasible for these weights (marginal defect {defect:e})"
        )));
    }
    Ok(())
}

/// Alternating minimization from an initial coupling using exact transport.
pub fn pw_align(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    init_plan: &TransportPlan,
    stop: &PwStopRule,
) -> Result<PwSolution> {
    pw_align_with(a, b, init_plan, stop, &CouplingSolver::default())
}

/// Alternating minimization with a chosen coupling solver.
///
/// Starts from `P₀ = procrustes_step(init_plan)`, then repeats: transport step
/// under `C_P`, Procrustes step on the new plan. The returned `(plan, map)`
/// pair is the one that produced the last recorded objective.
pub fn pw_align_with(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    init_plan: &TransportPlan,
    stop: &PwStopRule,
    solver: &CouplingSolver,
) -> Result<PwSolution> {
    check_same_dim(a, b)?;
    stop.validate()?;
    check_plan(a, b, init_plan)?;

    let mut map = procrustes_step(a, b, init_plan)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut best: Option<(CouplingStep, OrthogonalMap)> = None;
    for iter in 1..=stop.max_iters {
        let cost = cost_with_map(a, b, &map)?;
        let step = solver.solve(&cost, a, b)?;
        let objective = step.objective;
        let previous = trace.last().copied();
        trace.push(objective);
        let next_map = procrustes_step(a, b, &step.plan)?;
        best = Some((step, map));
        if let Some(prev) = previous {
            if stop.is_converged(prev, objective) {
                converged = true;
                break;
            }
        }
        if iter == stop.max_iters {
            break;
        }
        map = next_map;
    }
    let (step, map) = best.expect("at least one iteration");
    let cost = step.transport_cost.max(0.0);
    Ok(PwSolution {
        plan: step.plan,
        map,
        cost,
        distance: cost.sqrt(),
        iterations: trace.len(),
        objective_trace: trace,
        converged,
        duals: step.duals,
    })
}

/// PW distance from an initialization strategy.
pub fn pw_distance(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    init: &InitStrategy,
    stop: &PwStopRule,
) -> Result<PwSolution> {
    check_same_dim(a, b)?;
    let plan = initial_plan(a, b, init)?;
    pw_align(a, b, &plan, stop)
}

/// Global PW optimum by enumerating every permutation coupling, with the
/// closed-form optimal map for each. Valid for uniform weights on equal-size
/// clouds (an optimal vertex of the transport polytope is then a
/// permutation); limited to n ≤ 8.
pub fn pw_exact_oracle(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<PwSolution> {
    check_same_dim(a, b)?;
    let n = a.len();
    if n != b.len() {
        return Err(Error::TooLarge(format!(
            "exhaustive search needs equal sizes, got {n} and {}",
            b.len()
        )));
    }
    if n > 8 {
        return Err(Error::TooLarge(format!("{n} points (limit 8)")));
    }
    if !a.is_uniform(1e-12) || !b.is_uniform(1e-12) {
        return Err(Error::TooLarge("exhaustive search needs uniform weights".into()));
    }
    let d = a.dim();
    let x = a.support();
    let y = b.support();
    let inv_n = 1.0 / n as f64;
    let marginal = (a.squared_norms().sum() + b.squared_norms().sum()) * inv_n;

    let mut best_cost = f64::INFINITY;
    let mut best_perm: Vec<usize> = (0..n).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut eval = |perm: &[usize]| -> Result<()> {
        // Yᵀ Γᵀ X with Γ = perm / n
        let mut m = Array2::<f64>::zeros((d, d));
        for (i, &j) in perm.iter().enumerate() {
            for r in 0..d {
                for c in 0..d {
                    m[[r, c]] += y[[j, r]] * x[[i, c]];
                }
            }
        }
        m *= inv_n;
        let svd = linalg::jacobi_svd(&m, SVD_TOL)?;
        let cost = marginal - 2.0 * svd.s.sum();
        if cost < best_cost - 1e-15 {
            best_cost = cost;
            best_perm.copy_from_slice(perm);
        }
        Ok(())
    };

    // Heap's algorithm
    let mut c = vec![0usize; n];
    eval(&perm)?;
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            eval(&perm)?;
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }

    let plan = TransportPlan::from_permutation(&best_perm, a.weights(), b.weights())?;
    let map = procrustes_step(a, b, &plan)?;
    let cost = plan.cost(&cost_with_map(a, b, &map)?).max(0.0);
    Ok(PwSolution {
        plan,
        map,
        cost,
        distance: cost.sqrt(),
        objective_trace: vec![cost],
        iterations: 1,
        converged: true,
        duals: None,
    })
}
