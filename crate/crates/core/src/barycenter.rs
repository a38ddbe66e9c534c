//! Free-support PW barycenters: alternating alignment to every input with the
//! closed-form location update, optional weight optimization by accelerated
//! mirror descent, the entropic variant and two-shape interpolation.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::init::{initial_plan, InitStrategy};
use crate::kmeans::compress;
use crate::measure::DiscreteMeasure;
use crate::pw::{cost_with_map, max_increase, pw_align_with, CouplingSolver, OrthogonalMap, PwSolution, PwStopRule};
use crate::transport::{solve_emd, SinkhornConfig, TransportPlan};

const LAMBDA_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterProblem {
    pub inputs: Vec<DiscreteMeasure>,
    pub lambdas: Array1<f64>,
    pub target_size: usize,
    pub fixed_weights: Option<Array1<f64>>,
    pub init_support: Option<Array2<f64>>,
    pub seed: u64,
}

impl BarycenterProblem {
    /// Equal weights `1/r`, no fixed weights or initial support, seed 0.
    pub fn new(inputs: Vec<DiscreteMeasure>, target_size: usize) -> Self {
        let r = inputs.len().max(1);
        Self {
            inputs,
            lambdas: Array1::from_elem(r, 1.0 / r as f64),
            target_size,
            fixed_weights: None,
            init_support: None,
            seed: 0,
        }
    }

    pub fn with_lambdas(mut self, lambdas: Array1<f64>) -> Self {
        self.lambdas = lambdas;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_init_support(mut self, support: Array2<f64>) -> Self {
        self.init_support = Some(support);
        self
    }

    pub fn with_fixed_weights(mut self, weights: Array1<f64>) -> Self {
        self.fixed_weights = Some(weights);
        self
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, DiscreteMeasure::dim)
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.inputs.len();
        if r == 0 {
            return Err(Error::InvalidArgument("a barycenter needs at least one input".into()));
        }
        let d = self.dim();
        if let Some(bad) = self.inputs.iter().find(|m| m.dim() != d) {
            return Err(Error::DimensionMismatch(format!(
                "inputs in dimensions {d} and {}",
                bad.dim()
            )));
        }
        if self.lambdas.len() != r {
            return Err(Error::DimensionMismatch(format!(
                "{} lambdas for {r} inputs",
                self.lambdas.len()
            )));
        }
        if self.lambdas.iter().any(|l| !(*l >= 0.0)) || (self.lambdas.sum() - 1.0).abs() > LAMBDA_TOL {
            return Err(Error::InvalidArgument("lambdas must be a probability vector".into()));
        }
        if self.target_size == 0 {
            return Err(Error::InvalidArgument("target size must be at least 1".into()));
        }
        if let Some(w) = &self.fixed_weights {
            if w.len() != self.target_size {
                return Err(Error::DimensionMismatch(format!(
                    "{} fixed weights for target size {}",
                    w.len(),
                    self.target_size
                )));
            }
        }
        if let Some(x) = &self.init_support {
            if x.dim() != (self.target_size, d) {
                return Err(Error::DimensionMismatch(format!(
                    "initial support {:?}, expected ({}, {d})",
                    x.dim(),
                    self.target_size
                )));
            }
        }
        Ok(())
    }

    /// Initial support: the given one, or a compression of the input with
    /// the largest λ (first on ties) with a small seeded jitter.
    fn initial_measure(&self) -> Result<DiscreteMeasure> {
        let weights = match &self.fixed_weights {
            Some(w) => w.clone(),
            None => Array1::from_elem(self.target_size, 1.0 / self.target_size as f64),
        };
        let support = match &self.init_support {
            Some(x) => x.clone(),
            None => {
                let lead = (0..self.inputs.len()).fold(0, |b, j| if self.lambdas[j] > self.lambdas[b] { j } else { b });
                let base = compress(&self.inputs[lead], self.target_size, self.seed)?;
                jitter(base.support().to_owned(), 0.01, self.seed)
            }
        };
        DiscreteMeasure::new(support, weights)
    }
}

fn jitter(mut x: Array2<f64>, scale: f64, seed: u64) -> Array2<f64> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let radius = x
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .fold(0.0, f64::max)
        .max(1e-12);
    let noise = Normal::new(0.0, scale * radius).expect("finite scale");
    x.mapv_inplace(|v| v + noise.sample(&mut rng));
    x
}

/// How each input is aligned to the barycenter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alignment {
    /// Alternating Procrustes/transport solve (the PW barycenter).
    #[default]
    Procrustes,
    /// Transport only, with `P = I` (the plain Wasserstein barycenter).
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightOptConfig {
    pub t0: f64,
    pub iters: usize,
}

impl Default for WeightOptConfig {
    fn default() -> Self {
        Self { t0: 1.0, iters: 50 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterConfig {
    /// Initializer for the first alignment to each input.
    pub init: InitStrategy,
    /// Outer-loop stopping rule.
    pub stop: PwStopRule,
    /// Stopping rule of each alignment.
    pub inner_stop: PwStopRule,
    pub solver: CouplingSolver,
    pub alignment: Alignment,
    pub weight_opt: Option<WeightOptConfig>,
}

impl Default for BarycenterConfig {
    fn default() -> Self {
        Self {
            init: InitStrategy::fiedler_w(),
            stop: PwStopRule::default(),
            inner_stop: PwStopRule::default(),
            solver: CouplingSolver::default(),
            alignment: Alignment::Procrustes,
            weight_opt: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BarycenterState {
    pub support: Array2<f64>,
    pub weights: Array1<f64>,
    /// Alignment of the current support to each input.
    pub per_input: Vec<PwSolution>,
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl BarycenterState {
    pub fn measure(&self) -> Result<DiscreteMeasure> {
        DiscreteMeasure::new(self.support.clone(), self.weights.clone())
    }

    pub fn max_trace_increase(&self) -> f64 {
        max_increase(&self.objective_trace)
    }
}

/// State of the accelerated mirror-descent scheme on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightOptState {
    pub p_hat: Array1<f64>,
    pub p_tilde: Array1<f64>,
    pub t: usize,
    pub t0: f64,
    pub beta: f64,
}

impl WeightOptState {
    pub fn new(p: Array1<f64>, t0: f64) -> Self {
        Self {
            p_hat: p.clone(),
            p_tilde: p,
            t: 1,
            t0,
            beta: 1.0,
        }
    }

    /// The point `(1 − β⁻¹) p̂ + β⁻¹ p̃` where the gradient is evaluated.
    pub fn query(&self) -> Array1<f64> {
        let inv = 1.0 / self.beta;
        &self.p_hat * (1.0 - inv) + &self.p_tilde * inv
    }

    /// Multiplicative update of `p̃` with gradient `alpha`, then the
    /// averaging of `p̂`.
    pub fn update(&mut self, alpha: ArrayView1<'_, f64>) -> Result<()> {
        let logits: Array1<f64> = self
            .p_tilde
            .iter()
            .zip(alpha.iter())
            .map(|(&p, &a)| {
                if p > 0.0 {
                    p.ln() - self.t0 * self.beta * a
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::NumericalUnderflow("weight update"));
        }
        let expd = logits.mapv(|l| (l - max).exp());
        let total = expd.sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::NumericalUnderflow("weight update"));
        }
        self.p_tilde = expd / total;
        let inv = 1.0 / self.beta;
        self.p_hat = &self.p_hat * (1.0 - inv) + &self.p_tilde * inv;
        self.p_hat /= self.p_hat.sum();
        self.t += 1;
        self.beta = (self.t as f64 + 1.0) / 2.0;
        Ok(())
    }
}

/// `Σ_j λ_j diag(p⁻¹) Γ_j X_j P_j`.
pub fn location_update(
    weights: ArrayView1<'_, f64>,
    inputs: &[DiscreteMeasure],
    lambdas: ArrayView1<'_, f64>,
    per_input: &[PwSolution],
) -> Result<Array2<f64>> {
    if let Some(i) = weights.iter().position(|&w| w <= 0.0) {
        return Err(Error::ZeroWeight(i));
    }
    if inputs.len() != per_input.len() || inputs.len() != lambdas.len() {
        return Err(Error::DimensionMismatch(
            "inputs, lambdas and solutions differ in count".into(),
        ));
    }
    let d = inputs[0].dim();
    let mut acc = Array2::<f64>::zeros((weights.len(), d));
    for ((input, sol), &lambda) in inputs.iter().zip(per_input).zip(lambdas.iter()) {
        if lambda == 0.0 {
            continue;
        }
        let target = sol.plan.coupling().dot(&input.support().dot(sol.map.matrix()));
        acc.scaled_add(lambda, &target);
    }
    let inv = weights.mapv(|w| 1.0 / w).insert_axis(Axis(1));
    Ok(acc * &inv)
}

/// `g(X) = Σ_j λ_j ⟨C_{P_j}(X), Γ_j⟩` for fixed plans and maps.
pub fn partial_objective(
    support: &Array2<f64>,
    weights: ArrayView1<'_, f64>,
    inputs: &[DiscreteMeasure],
    lambdas: ArrayView1<'_, f64>,
    per_input: &[PwSolution],
) -> Result<f64> {
    let x = DiscreteMeasure::from_parts_unchecked(support.clone(), weights.to_owned());
    let mut total = 0.0;
    for ((input, sol), &lambda) in inputs.iter().zip(per_input).zip(lambdas.iter()) {
        total += lambda * sol.plan.cost(&cost_with_map(&x, input, &sol.map)?);
    }
    Ok(total)
}

/// `∇_X g = 2 diag(p) X − 2 Σ_j λ_j Γ_j X_j P_j`.
pub fn partial_gradient(
    support: &Array2<f64>,
    weights: ArrayView1<'_, f64>,
    inputs: &[DiscreteMeasure],
    lambdas: ArrayView1<'_, f64>,
    per_input: &[PwSolution],
) -> Array2<f64> {
    let mut grad = support * &weights.insert_axis(Axis(1)) * 2.0;
    for ((input, sol), &lambda) in inputs.iter().zip(per_input).zip(lambdas.iter()) {
        let target = sol.plan.coupling().dot(&input.support().dot(sol.map.matrix()));
        grad.scaled_add(-2.0 * lambda, &target);
    }
    grad
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// Max discrepancy between the analytic gradient and central differences.
    pub gradient_error: f64,
    /// Max discrepancy between `2 p_i` and second differences.
    pub hessian_error: f64,
}

/// Compares the closed-form gradient and Hessian `2 diag(p)` with finite
/// differences (step 1e-5 for the gradient, 1e-4 for second differences).
pub fn gradient_check(
    support: &Array2<f64>,
    weights: ArrayView1<'_, f64>,
    inputs: &[DiscreteMeasure],
    lambdas: ArrayView1<'_, f64>,
    per_input: &[PwSolution],
) -> Result<GradientCheck> {
    let grad = partial_gradient(support, weights, inputs, lambdas, per_input);
    let f = |x: &Array2<f64>| partial_objective(x, weights, inputs, lambdas, per_input);
    let f0 = f(support)?;
    let (n, d) = support.dim();
    let (h1, h2) = (1e-5, 1e-4);
    let mut gradient_error: f64 = 0.0;
    let mut hessian_error: f64 = 0.0;
    for i in 0..n {
        for c in 0..d {
            let mut x = support.clone();
            x[[i, c]] += h1;
            let fp = f(&x)?;
            x[[i, c]] -= 2.0 * h1;
            let fm = f(&x)?;
            gradient_error = gradient_error.max(((fp - fm) / (2.0 * h1) - grad[[i, c]]).abs());

            let mut x = support.clone();
            x[[i, c]] += h2;
            let fp = f(&x)?;
            x[[i, c]] -= 2.0 * h2;
            let fm = f(&x)?;
            let second = (fp - 2.0 * f0 + fm) / (h2 * h2);
            hessian_error = hessian_error.max((second - 2.0 * weights[i]).abs());
        }
    }
    Ok(GradientCheck {
        gradient_error,
        hessian_error,
    })
}

fn identity_alignment(x: &DiscreteMeasure, input: &DiscreteMeasure, solver: &CouplingSolver) -> Result<PwSolution> {
    let map = OrthogonalMap::identity(x.dim());
    let cost = cost_with_map(x, input, &map)?;
    let step = solver.solve(&cost, x, input)?;
    Ok(PwSolution {
        cost: step.transport_cost.max(0.0),
        distance: step.transport_cost.max(0.0).sqrt(),
        objective_trace: vec![step.objective],
        plan: step.plan,
        map,
        iterations: 1,
        converged: true,
        duals: step.duals,
    })
}

fn align_all(
    x: &DiscreteMeasure,
    inputs: &[DiscreteMeasure],
    warm: Option<&[TransportPlan]>,
    cfg: &BarycenterConfig,
) -> Result<Vec<PwSolution>> {
    (0..inputs.len())
        .into_par_iter()
        .map(|j| match cfg.alignment {
            Alignment::Identity => identity_alignment(x, &inputs[j], &cfg.solver),
            Alignment::Procrustes => {
                let start = match warm {
                    Some(plans)
                        if plans[j].dim() == (x.len(), inputs[j].len()) && feasible_for(&plans[j], x, &inputs[j]) =>
                    {
                        plans[j].clone()
                    }
                    _ => initial_plan(x, &inputs[j], &cfg.init)?,
                };
                pw_align_with(x, &inputs[j], &start, &cfg.inner_stop, &cfg.solver)
            }
        })
        .collect()
}

fn feasible_for(plan: &TransportPlan, a: &DiscreteMeasure, b: &DiscreteMeasure) -> bool {
    let rows = plan.coupling().sum_axis(Axis(1));
    let cols = plan.coupling().sum_axis(Axis(0));
    rows.iter().zip(a.weights().iter()).all(|(r, w)| (r - w).abs() <= 1e-9)
        && cols.iter().zip(b.weights().iter()).all(|(c, w)| (c - w).abs() <= 1e-9)
}

fn weighted_objective(lambdas: ArrayView1<'_, f64>, sols: &[PwSolution]) -> f64 {
    sols.iter().zip(lambdas.iter()).map(|(s, l)| l * s.objective()).sum()
}

/// Exact transport to every input at weights `p` with the maps held fixed.
fn transport_at(
    support: &Array2<f64>,
    p: &Array1<f64>,
    inputs: &[DiscreteMeasure],
    maps: &[OrthogonalMap],
) -> Result<Vec<PwSolution>> {
    let x = DiscreteMeasure::new(support.clone(), p.clone())?;
    (0..inputs.len())
        .into_par_iter()
        .map(|j| {
            let cost = cost_with_map(&x, &inputs[j], &maps[j])?;
            let s = solve_emd(&cost, x.weights(), inputs[j].weights())?;
            Ok(PwSolution {
                cost: s.cost.max(0.0),
                distance: s.cost.max(0.0).sqrt(),
                objective_trace: vec![s.cost],
                plan: s.plan,
                map: maps[j].clone(),
                iterations: 1,
                converged: true,
                duals: Some(s.duals),
            })
        })
        .collect()
}

/// Mirror descent on the barycenter weights with the current support and
/// maps fixed; transport is re-solved at every query point so the duals stay
/// current. Returns the final `p̂`.
pub fn optimize_weights(
    state: &BarycenterState,
    problem: &BarycenterProblem,
    t0: f64,
    iters: usize,
) -> Result<Array1<f64>> {
    if !(t0 > 0.0) {
        return Err(Error::InvalidArgument("t0 must be positive".into()));
    }
    let maps: Vec<OrthogonalMap> = state.per_input.iter().map(|s| s.map.clone()).collect();
    let mut opt = WeightOptState::new(state.weights.clone(), t0);
    for _ in 0..iters {
        let p = opt.query();
        let sols = transport_at(&state.support, &p, &problem.inputs, &maps)?;
        let mut alpha = Array1::<f64>::zeros(p.len());
        for (s, &lambda) in sols.iter().zip(problem.lambdas.iter()) {
            let duals = s.duals.as_ref().expect("exact transport yields duals");
            alpha.scaled_add(lambda, &duals.alpha);
        }
        opt.update(alpha.view())?;
    }
    Ok(opt.p_hat)
}

/// Exact PW barycenter.
pub fn solve_barycenter(
    problem: &BarycenterProblem,
    init: &InitStrategy,
    stop: &PwStopRule,
    optimize_weights_flag: bool,
) -> Result<BarycenterState> {
    let cfg = BarycenterConfig {
        init: init.clone(),
        stop: *stop,
        weight_opt: optimize_weights_flag.then(WeightOptConfig::default),
        ..BarycenterConfig::default()
    };
    solve_barycenter_with(problem, &cfg)
}

/// Barycenter with every transport step replaced by Sinkhorn at `epsilon`.
pub fn solve_barycenter_entropic(
    problem: &BarycenterProblem,
    epsilon: f64,
    init: &InitStrategy,
    stop: &PwStopRule,
) -> Result<BarycenterState> {
    let cfg = BarycenterConfig {
        init: init.clone(),
        stop: *stop,
        solver: CouplingSolver::Entropic(SinkhornConfig::new(epsilon)),
        ..BarycenterConfig::default()
    };
    solve_barycenter_with(problem, &cfg)
}

pub fn solve_barycenter_with(problem: &BarycenterProblem, cfg: &BarycenterConfig) -> Result<BarycenterState> {
    solve_from(problem, cfg, None)
}

/// As [`solve_barycenter_with`], with the first alignment to each input
/// started from the given plans (barycenter rows, input columns) when they
/// are feasible.
pub fn solve_barycenter_warm(
    problem: &BarycenterProblem,
    cfg: &BarycenterConfig,
    warm: Vec<TransportPlan>,
) -> Result<BarycenterState> {
    if warm.len() != problem.inputs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} warm plans for {} inputs",
            warm.len(),
            problem.inputs.len()
        )));
    }
    solve_from(problem, cfg, Some(warm))
}

fn solve_from(
    problem: &BarycenterProblem,
    cfg: &BarycenterConfig,
    warm: Option<Vec<TransportPlan>>,
) -> Result<BarycenterState> {
    problem.validate()?;
    cfg.stop.validate()?;
    if cfg.weight_opt.is_some() && !matches!(cfg.solver, CouplingSolver::Exact(_)) {
        return Err(Error::InvalidArgument(
            "weight optimization needs the exact solver".into(),
        ));
    }
    let lambdas = problem.lambdas.view();
    let start = problem.initial_measure()?;
    let mut support = start.support().to_owned();
    let mut weights = start.weights().to_owned();
    let mut warm = warm;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut current: Option<(Array2<f64>, Array1<f64>, Vec<PwSolution>)> = None;

    for iter in 1..=cfg.stop.max_iters {
        iterations = iter;
        let x = DiscreteMeasure::new(support.clone(), weights.clone())?;
        let mut sols = align_all(&x, &problem.inputs, warm.as_deref(), cfg)?;
        let mut f = weighted_objective(lambdas, &sols);
        let previous = trace.last().copied();
        trace.push(f);
        log::debug!("barycenter iteration {iter}: objective {f:e}");

        if let Some(wcfg) = &cfg.weight_opt {
            let snapshot = BarycenterState {
                support: support.clone(),
                weights: weights.clone(),
                per_input: sols.clone(),
                objective: f,
                objective_trace: Vec::new(),
                iterations: iter,
                converged: false,
            };
            let p = optimize_weights(&snapshot, problem, wcfg.t0, wcfg.iters)?;
            let maps: Vec<OrthogonalMap> = sols.iter().map(|s| s.map.clone()).collect();
            let candidate = transport_at(&support, &p, &problem.inputs, &maps)?;
            let g = weighted_objective(lambdas, &candidate);
            if g <= f && p.iter().all(|&w| w > 0.0) {
                weights = p;
                sols = candidate;
                f = g;
                trace.push(f);
            }
        }

        let done = previous.is_some_and(|prev| cfg.stop.is_converged(prev, f));
        current = Some((support.clone(), weights.clone(), sols));
        if done {
            converged = true;
            break;
        }
        if iter == cfg.stop.max_iters {
            break;
        }
        let (_, _, sols) = current.as_ref().expect("just set");
        support = location_update(weights.view(), &problem.inputs, lambdas, sols)?;
        warm = Some(sols.iter().map(|s| s.plan.clone()).collect());
    }

    let (support, weights, per_input) = current.expect("at least one iteration");
    Ok(BarycenterState {
        objective: *trace.last().expect("non-empty trace"),
        support,
        weights,
        per_input,
        objective_trace: trace,
        iterations,
        converged,
    })
}

/// Barycenters of `(a, b)` with `λ = (1 − η, η)` for each η in ascending
/// order, warm-starting every solve from the previous one.
pub fn interpolate(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    etas: &[f64],
    target_size: usize,
    cfg: &BarycenterConfig,
    seed: u64,
) -> Result<Vec<BarycenterState>> {
    if etas.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::InvalidArgument("every eta must lie in [0, 1]".into()));
    }
    if etas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("etas must be sorted ascending".into()));
    }
    let mut out: Vec<BarycenterState> = Vec::with_capacity(etas.len());
    for &eta in etas {
        let mut problem = BarycenterProblem::new(vec![a.clone(), b.clone()], target_size)
            .with_lambdas(Array1::from(vec![1.0 - eta, eta]))
            .with_seed(seed);
        let warm = out.last().map(|prev| {
            problem.init_support = Some(prev.support.clone());
            problem.fixed_weights = Some(prev.weights.clone());
            prev.per_input.iter().map(|s| s.plan.clone()).collect()
        });
        out.push(solve_from(&problem, cfg, warm)?);
    }
    Ok(out)
}
