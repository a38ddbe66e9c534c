//! Square-loss Gromov-Wasserstein by conditional gradient (Frank-Wolfe with
//! exact line search).

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::transport::{solve_emd, CostMatrix, TransportPlan};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GwConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for GwConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            rel_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GwSolution {
    pub plan: TransportPlan,
    pub cost: f64,
    pub objective_trace: Vec<f64>,
}

/// Pairwise Euclidean distances between the rows of `x`.
pub fn pairwise_distances(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut out = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = x
                .row(i)
                .iter()
                .zip(x.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            out[[i, j]] = d;
            out[[j, i]] = d;
        }
    }
    out
}

struct GwProblem<'a> {
    c1: &'a Array2<f64>,
    c2: &'a Array2<f64>,
    const_c: Array2<f64>,
}

impl<'a> GwProblem<'a> {
    fn new(c1: &'a Array2<f64>, c2: &'a Array2<f64>, p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> Self {
        let a = c1.mapv(|x| x * x).dot(&p);
        let b = c2.mapv(|x| x * x).dot(&q);
        let const_c = Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] + b[j]);
        Self { c1, c2, const_c }
    }

    fn tensor(&self, g: &Array2<f64>) -> Array2<f64> {
        self.c1.dot(g).dot(self.c2)
    }

    fn objective(&self, g: &Array2<f64>) -> f64 {
        (&self.const_c * g).sum() - 2.0 * (&self.tensor(g) * g).sum()
    }
}

/// Σ_{ijkl} (C1_ik − C2_jl)² Γ_ij Γ_kl for a feasible plan.
pub fn gw_objective(c1: &Array2<f64>, c2: &Array2<f64>, plan: &TransportPlan) -> f64 {
    GwProblem::new(c1, c2, plan.row_marginal(), plan.col_marginal()).objective(plan.coupling())
}

/// Conditional gradient from the product coupling `p qᵀ`.
pub fn gromov_wasserstein(
    c1: &Array2<f64>,
    c2: &Array2<f64>,
    p: ArrayView1<'_, f64>,
    q: ArrayView1<'_, f64>,
    cfg: &GwConfig,
) -> Result<GwSolution> {
    let (n, m) = (p.len(), q.len());
    if c1.dim() != (n, n) || c2.dim() != (m, m) {
        return Err(Error::DimensionMismatch(format!(
            "distance matrices {:?} and {:?} for {n} and {m} points",
            c1.dim(),
            c2.dim()
        )));
    }
    if cfg.max_iters == 0 {
        return Err(Error::InvalidArgument("gw iterations must be at least 1".into()));
    }
    let problem = GwProblem::new(c1, c2, p, q);
    let mut plan = TransportPlan::product(p, q);
    let mut value = problem.objective(plan.coupling());
    let mut trace = vec![value];
    for _ in 0..cfg.max_iters {
        let g = plan.coupling();
        let grad = &problem.const_c - &(problem.tensor(g) * 4.0);
        // the linear minimization oracle; gradient entries may be negative
        let shift = grad.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0);
        let target = solve_emd(&CostMatrix::new(grad.mapv(|x| x - shift))?, p, q)?.plan;
        let delta = target.coupling() - g;
        let a = -2.0 * (&problem.tensor(&delta) * &delta).sum();
        let b = (&grad * &delta).sum();
        let tau = if a > 0.0 {
            (-b / (2.0 * a)).clamp(0.0, 1.0)
        } else if a + b < 0.0 {
            1.0
        } else {
            0.0
        };
        if tau == 0.0 {
            break;
        }
        let next = g + &(delta * tau);
        let next_value = problem.objective(&next);
        if next_value > value {
            break;
        }
        plan = TransportPlan::from_parts_unchecked(next, p.to_owned(), q.to_owned());
        let previous = value;
        value = next_value;
        trace.push(value);
        if previous - value <= cfg.rel_tol * previous.abs() {
            break;
        }
    }
    Ok(GwSolution {
        plan,
        cost: value.max(0.0),
        objective_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{apply_isometry, DiscreteMeasure, PermutedIsometry};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(seed: u64, n: usize, d: usize) -> DiscreteMeasure {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DiscreteMeasure::uniform(Array2::from_shape_fn((n, d), |_| rng.random::<f64>())).unwrap()
    }

    /// Direct quadruple sum, independent of the factored objective.
    fn quadruple_sum(c1: &Array2<f64>, c2: &Array2<f64>, g: &Array2<f64>) -> f64 {
        let (n, m) = g.dim();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..m {
                for k in 0..n {
                    for l in 0..m {
                        total += (c1[[i, k]] - c2[[j, l]]).powi(2) * g[[i, j]] * g[[k, l]];
                    }
                }
            }
        }
        total
    }

    #[test]
    fn factored_objective_matches_definition() {
        let a = cloud(1, 5, 2);
        let b = cloud(2, 4, 2);
        let (c1, c2) = (pairwise_distances(a.support()), pairwise_distances(b.support()));
        let plan = TransportPlan::product(a.weights(), b.weights());
        let direct = quadruple_sum(&c1, &c2, plan.coupling());
        assert!((gw_objective(&c1, &c2, &plan) - direct).abs() < 1e-12);
    }

    #[test]
    fn identical_and_isometric_inputs() {
        let a = cloud(3, 10, 2);
        let c1 = pairwise_distances(a.support());
        let s = gromov_wasserstein(&c1, &c1, a.weights(), a.weights(), &GwConfig::default()).unwrap();
        assert!(s.cost <= 1e-9, "cost {}", s.cost);

        let b = apply_isometry(&a, &PermutedIsometry::random(10, 2, true, 5)).unwrap();
        let c2 = pairwise_distances(b.support());
        let s = gromov_wasserstein(&c1, &c2, a.weights(), b.weights(), &GwConfig::default()).unwrap();
        assert!(s.cost <= 1e-9, "cost {}", s.cost);
        assert!(s.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(s.plan.marginal_defect() < 1e-9);
    }

    #[test]
    fn three_points_match_brute_force() {
        let a = DiscreteMeasure::uniform(array![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]]).unwrap();
        let b = DiscreteMeasure::uniform(array![[0.0, 0.0], [2.2, 0.1], [0.3, 0.9]]).unwrap();
        let (c1, c2) = (pairwise_distances(a.support()), pairwise_distances(b.support()));
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let best = perms
            .iter()
            .map(|perm| {
                let plan = TransportPlan::from_permutation(perm, a.weights(), b.weights()).unwrap();
                quadruple_sum(&c1, &c2, plan.coupling())
            })
            .fold(f64::INFINITY, f64::min);
        let s = gromov_wasserstein(&c1, &c2, a.weights(), b.weights(), &GwConfig::default()).unwrap();
        assert!((s.cost - best).abs() < 1e-9, "cg {} brute {}", s.cost, best);
    }
}
