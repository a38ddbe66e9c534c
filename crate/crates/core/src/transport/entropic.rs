//! Entropy-regularized transport by Sinkhorn scaling.

use ndarray::{Array1, Array2, ArrayView1};

use super::exact::{CostMatrix, TransportPlan};
use crate::error::{Error, Result};

/// Below this ratio `ε / max C` the iterations run in the log domain.
const LOG_DOMAIN_THRESHOLD: f64 = 0.05;
/// Log-domain sweeps before a Newton polish of the dual is attempted.
const NEWTON_AFTER: usize = 200;
/// Largest `n + m` for which the dense Newton system is formed.
const NEWTON_MAX_SIZE: usize = 1500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    /// L1 bound on the marginal violation.
    pub marginal_tol: f64,
}

impl SinkhornConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            max_iters: 100_000,
            marginal_tol: 1e-9,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    pub plan: TransportPlan,
    /// `⟨C, Γ⟩`
    pub transport_cost: f64,
    /// `⟨C, Γ⟩ + ε Σ Γ log Γ`
    pub regularized_cost: f64,
    pub iterations: usize,
}

/// `Σ Γ_ij log Γ_ij` with `0 log 0 = 0`.
pub fn neg_entropy(coupling: &Array2<f64>) -> f64 {
    coupling.iter().filter(|&&g| g > 0.0).map(|&g| g * g.ln()).sum()
}

pub fn sinkhorn(
    cost: &CostMatrix,
    p: ArrayView1<'_, f64>,
    q: ArrayView1<'_, f64>,
    cfg: &SinkhornConfig,
) -> Result<SinkhornSolution> {
    cfg.validate()?;
    let (n, m) = cost.dim();
    if p.len() != n || q.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "cost is {n}x{m}, marginals have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    let (sp, sq) = (p.sum(), q.sum());
    if (sp - sq).abs() > 1e-9 || (sp - 1.0).abs() > 1e-9 {
        return Err(Error::InfeasibleMarginals(sp, sq));
    }
    let p = p.to_owned() / sp;
    let q = q.to_owned() / sq;

    let cmax = cost.max_entry();
    let (coupling, iterations) = if cmax > 0.0 && cfg.epsilon / cmax < LOG_DOMAIN_THRESHOLD {
        log_domain(cost.entries(), &p, &q, cfg)?
    } else {
        scaling(cost.entries(), &p, &q, cfg)?
    };

    let transport_cost = (&coupling * cost.entries()).sum();
    let regularized_cost = transport_cost + cfg.epsilon * neg_entropy(&coupling);
    Ok(SinkhornSolution {
        plan: TransportPlan::from_parts_unchecked(coupling, p, q),
        transport_cost,
        regularized_cost,
        iterations,
    })
}

fn l1_violation(coupling: &Array2<f64>, p: &Array1<f64>, q: &Array1<f64>) -> f64 {
    let rows = coupling.sum_axis(ndarray::Axis(1));
    let cols = coupling.sum_axis(ndarray::Axis(0));
    (&rows - p).mapv(f64::abs).sum() + (&cols - q).mapv(f64::abs).sum()
}

fn scaling(c: &Array2<f64>, p: &Array1<f64>, q: &Array1<f64>, cfg: &SinkhornConfig) -> Result<(Array2<f64>, usize)> {
    let kernel = c.mapv(|x| (-x / cfg.epsilon).exp());
    let mut v = Array1::<f64>::ones(q.len());
    for it in 1..=cfg.max_iters {
        let kv = kernel.dot(&v);
        let u = p / &kv;
        let ktu = kernel.t().dot(&u);
        v = q / &ktu;
        if u.iter().chain(v.iter()).any(|x| !x.is_finite() || *x == 0.0) {
            return Err(Error::NumericalUnderflow("sinkhorn scaling"));
        }
        // columns are exact after the v update; check the rows
        let coupling = &kernel * &u.view().insert_axis(ndarray::Axis(1)) * v.view().insert_axis(ndarray::Axis(0));
        if l1_violation(&coupling, p, q) <= cfg.marginal_tol {
            return Ok((coupling, it));
        }
    }
    Err(Error::NonConvergence {
        solver: "sinkhorn",
        iterations: cfg.max_iters,
    })
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Dual (log-potential) iterations: `f_i = ε log p_i − ε LSE_j((g_j − C_ij)/ε)`.
fn log_domain(c: &Array2<f64>, p: &Array1<f64>, q: &Array1<f64>, cfg: &SinkhornConfig) -> Result<(Array2<f64>, usize)> {
    let eps = cfg.epsilon;
    let (n, m) = c.dim();
    let log_p = p.mapv(f64::ln);
    let log_q = q.mapv(f64::ln);
    let mut f = Array1::<f64>::zeros(n);
    let mut g = Array1::<f64>::zeros(m);
    let plan_of = |f: &Array1<f64>, g: &Array1<f64>| {
        Array2::from_shape_fn((n, m), |(i, j)| ((f[i] + g[j] - c[[i, j]]) / eps).exp())
    };
    for it in 1..=cfg.max_iters {
        for i in 0..n {
            let lse = logsumexp((0..m).map(|j| (g[j] - c[[i, j]]) / eps));
            f[i] = eps * (log_p[i] - lse);
        }
        for j in 0..m {
            let lse = logsumexp((0..n).map(|i| (f[i] - c[[i, j]]) / eps));
            g[j] = eps * (log_q[j] - lse);
        }
        if f.iter().chain(g.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NumericalUnderflow("log-domain sinkhorn"));
        }
        // convergence check every few sweeps; the row residual is the only one
        // left after the column update
        if it % 10 == 0 || it == cfg.max_iters {
            let coupling = plan_of(&f, &g);
            if l1_violation(&coupling, p, q) <= cfg.marginal_tol {
                return Ok((coupling, it));
            }
        }
        // slow mixing (points closer than sqrt(ε)) stalls the sweeps; the dual
        // is smooth and small here, so finish with Newton
        if it == NEWTON_AFTER && n + m <= NEWTON_MAX_SIZE {
            if let Some((nf, ng)) = newton_polish(c, p, q, eps, &f, &g) {
                let coupling = plan_of(&nf, &ng);
                if l1_violation(&coupling, p, q) <= cfg.marginal_tol {
                    return Ok((coupling, it));
                }
            }
        }
    }
    Err(Error::NonConvergence {
        solver: "sinkhorn",
        iterations: cfg.max_iters,
    })
}

/// Damped Newton iteration on the dual `⟨f,p⟩ + ⟨g,q⟩ − ε Σ exp((f_i + g_j − C_ij)/ε)`
/// with `g` pinned at its last entry. Steps are accepted when they reduce
/// the marginal residual (dual values are too flat near the optimum for a
/// sufficient-increase test). Returns `None` when the Hessian factorization
/// fails.
fn newton_polish(
    c: &Array2<f64>,
    p: &Array1<f64>,
    q: &Array1<f64>,
    eps: f64,
    f: &Array1<f64>,
    g: &Array1<f64>,
) -> Option<(Array1<f64>, Array1<f64>)> {
    let (n, m) = c.dim();
    let k = n + m - 1;
    let mut f = f.clone();
    let mut g = g.clone();
    let plan = |f: &Array1<f64>, g: &Array1<f64>| {
        Array2::from_shape_fn((n, m), |(i, j)| ((f[i] + g[j] - c[[i, j]]) / eps).exp())
    };
    let mut pl = plan(&f, &g);
    let mut residual = l1_violation(&pl, p, q);
    for _ in 0..60 {
        if residual <= 1e-15 {
            break;
        }
        let rows = pl.sum_axis(ndarray::Axis(1));
        let cols = pl.sum_axis(ndarray::Axis(0));
        let grad = nalgebra::DVector::from_iterator(
            k,
            (0..n).map(|i| p[i] - rows[i]).chain((0..m - 1).map(|j| q[j] - cols[j])),
        );
        let mut h = nalgebra::DMatrix::<f64>::zeros(k, k);
        for i in 0..n {
            h[(i, i)] = rows[i] / eps;
            for j in 0..m - 1 {
                h[(i, n + j)] = pl[[i, j]] / eps;
                h[(n + j, i)] = pl[[i, j]] / eps;
            }
        }
        for j in 0..m - 1 {
            h[(n + j, n + j)] = cols[j] / eps;
        }
        // a relative ridge keeps the factorization stable when some blocks of
        // the plan are coupled only through underflowing entries
        for d in 0..k {
            h[(d, d)] *= 1.0 + 1e-10;
        }
        let step = h.cholesky()?.solve(&grad);
        let mut t = 1.0;
        loop {
            let nf = Array1::from_shape_fn(n, |i| f[i] + t * step[i]);
            let ng = Array1::from_shape_fn(m, |j| if j + 1 < m { g[j] + t * step[n + j] } else { g[j] });
            let npl = plan(&nf, &ng);
            let nr = l1_violation(&npl, p, q);
            if nr.is_finite() && nr < residual {
                f = nf;
                g = ng;
                pl = npl;
                residual = nr;
                break;
            }
            t *= 0.5;
            if t < 1e-10 {
                return Some((f, g));
            }
        }
    }
    Some((f, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::exact::solve_emd;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_point() {
        let c = CostMatrix::new(array![[2.5]]).unwrap();
        let s = sinkhorn(&c, array![1.0].view(), array![1.0].view(), &SinkhornConfig::new(0.3)).unwrap();
        assert!((s.plan.coupling()[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((s.transport_cost - 2.5).abs() < 1e-12);
    }

    #[test]
    fn large_epsilon_gives_product_plan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = CostMatrix::new(Array2::from_shape_fn((4, 3), |_| rng.random::<f64>())).unwrap();
        let p = array![0.1, 0.2, 0.3, 0.4];
        let q = array![0.5, 0.25, 0.25];
        let s = sinkhorn(&c, p.view(), q.view(), &SinkhornConfig::new(1e6)).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                assert!((s.plan.coupling()[[i, j]] - p[i] * q[j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn small_epsilon_approaches_emd() {
        let c = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let p = array![0.5, 0.5];
        let s = sinkhorn(&c, p.view(), p.view(), &SinkhornConfig::new(0.01)).unwrap();
        let exact = solve_emd(&c, p.view(), p.view()).unwrap().cost;
        assert!((s.transport_cost - exact).abs() < 1e-3);
        assert!(s.plan.coupling().iter().all(|&g| g > 0.0));
    }

    #[test]
    fn transpose_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = CostMatrix::new(Array2::from_shape_fn((5, 7), |_| rng.random::<f64>())).unwrap();
        let p = Array1::from_elem(5, 0.2);
        let q = Array1::from_elem(7, 1.0 / 7.0);
        for eps in [1.0, 0.01] {
            let cfg = SinkhornConfig::new(eps);
            let a = sinkhorn(&c, p.view(), q.view(), &cfg).unwrap();
            let b = sinkhorn(&c.transpose(), q.view(), p.view(), &cfg).unwrap();
            let diff = (a.plan.coupling() - &b.plan.coupling().t())
                .mapv(f64::abs)
                .fold(0.0_f64, |m, &x| m.max(x));
            assert!(diff < 1e-9, "eps={eps} diff={diff}");
        }
    }

    #[test]
    fn converges_with_near_duplicate_points() {
        // two points closer than sqrt(ε): plain sweeps mix very slowly
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Array2::from_shape_fn((10, 2), |_| rng.random::<f64>() - 0.5);
        let mut y = x.clone();
        y[[1, 0]] = y[[0, 0]] + 0.05;
        y[[1, 1]] = y[[0, 1]];
        let c = CostMatrix::squared_euclidean(y.view(), y.view()).unwrap();
        let p = Array1::from_elem(10, 0.1);
        let s = sinkhorn(&c, p.view(), p.view(), &SinkhornConfig::new(0.01)).unwrap();
        assert!(s.plan.marginal_defect() <= 1e-9);
        assert!(s.iterations < 1000);
    }

    #[test]
    fn rejects_bad_epsilon() {
        let c = CostMatrix::new(array![[1.0]]).unwrap();
        assert!(sinkhorn(&c, array![1.0].view(), array![1.0].view(), &SinkhornConfig::new(0.0)).is_err());
    }

    #[test]
    fn iteration_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = CostMatrix::new(Array2::from_shape_fn((6, 6), |_| rng.random::<f64>())).unwrap();
        let p = Array1::from_elem(6, 1.0 / 6.0);
        let cfg = SinkhornConfig {
            epsilon: 0.001,
            max_iters: 1,
            marginal_tol: 1e-12,
        };
        assert!(matches!(
            sinkhorn(&c, p.view(), p.view(), &cfg),
            Err(Error::NonConvergence { .. })
        ));
    }
}
