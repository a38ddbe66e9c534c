//! Exact discrete optimal transport by the network simplex method on the
//! bipartite transportation graph.
//!
//! The basis is a spanning tree over `n` supply nodes (rows) and `m` demand
//! nodes (columns). Node potentials `u` (rows) and `v` (columns) satisfy
//! `u_i + v_j = c_ij` on every basic cell; a non-basic cell with negative
//! reduced cost `c_ij - u_i - v_j` enters, and the cycle it closes in the tree
//! is pushed until one of its decreasing cells hits zero.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;

const MARGINAL_TOL: f64 = 1e-9;
const NONE: usize = usize::MAX;
const PERTURBATION: f64 = 1e-10;

/// Nonnegative n×m ground cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if entries.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("cost matrix has non-finite entries".into()));
        }
        if entries.iter().any(|&c| c < 0.0) {
            return Err(Error::InvalidArgument("cost matrix has negative entries".into()));
        }
        Ok(Self(entries))
    }

    /// Squared Euclidean distances between the rows of `x` and `y`, clamped at
    /// zero.
    pub fn squared_euclidean(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<Self> {
        if x.ncols() != y.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "point dimensions differ: {} vs {}",
                x.ncols(),
                y.ncols()
            )));
        }
        let mut c = Array2::<f64>::zeros((x.nrows(), y.nrows()));
        for (i, xi) in x.rows().into_iter().enumerate() {
            for (j, yj) in y.rows().into_iter().enumerate() {
                c[[i, j]] = xi.iter().zip(yj.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            }
        }
        Ok(Self(c))
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.t().to_owned())
    }

    pub fn max_entry(&self) -> f64 {
        self.0.iter().cloned().fold(0.0, f64::max)
    }
}

/// A coupling `Γ` with its prescribed marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    coupling: Array2<f64>,
    row_marginal: Array1<f64>,
    col_marginal: Array1<f64>,
}

impl TransportPlan {
    /// Wraps a coupling, checking non-negativity and marginals within 1e-9.
    pub fn new(coupling: Array2<f64>, p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> Result<Self> {
        let plan = Self {
            coupling,
            row_marginal: p.to_owned(),
            col_marginal: q.to_owned(),
        };
        let defect = plan.marginal_defect();
        if plan.coupling.dim() != (p.len(), q.len()) {
            return Err(Error::DimensionMismatch(format!(
                "coupling {:?} vs marginals ({}, {})",
                plan.coupling.dim(),
                p.len(),
                q.len()
            )));
        }
        if plan.coupling.iter().any(|&g| !(g >= 0.0)) {
            return Err(Error::InvalidArgument("coupling has negative entries".into()));
        }
        if defect > MARGINAL_TOL {
            return Err(Error::InvalidArgument(format!("coupling marginals off by {defect:e}")));
        }
        Ok(plan)
    }

    /// The independent coupling `p qᵀ`.
    pub fn product(p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> Self {
        let coupling = Array2::from_shape_fn((p.len(), q.len()), |(i, j)| p[i] * q[j]);
        Self {
            coupling,
            row_marginal: p.to_owned(),
            col_marginal: q.to_owned(),
        }
    }

    /// Plan moving mass `p_i` from row `i` to column `perm[i]`; requires
    /// matching marginals.
    pub fn from_permutation(perm: &[usize], p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> Result<Self> {
        let mut coupling = Array2::<f64>::zeros((p.len(), q.len()));
        for (i, &j) in perm.iter().enumerate() {
            if j >= q.len() {
                return Err(Error::DimensionMismatch(format!("column {j} out of range")));
            }
            coupling[[i, j]] = p[i];
        }
        Self::new(coupling, p, q)
    }

    pub(crate) fn from_parts_unchecked(
        coupling: Array2<f64>,
        row_marginal: Array1<f64>,
        col_marginal: Array1<f64>,
    ) -> Self {
        Self {
            coupling,
            row_marginal,
            col_marginal,
        }
    }

    pub fn coupling(&self) -> &Array2<f64> {
        &self.coupling
    }

    pub fn row_marginal(&self) -> ArrayView1<'_, f64> {
        self.row_marginal.view()
    }

    pub fn col_marginal(&self) -> ArrayView1<'_, f64> {
        self.col_marginal.view()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.coupling.dim()
    }

    /// Largest absolute deviation of the row/column sums from the marginals.
    pub fn marginal_defect(&self) -> f64 {
        let rows = self.coupling.sum_axis(ndarray::Axis(1));
        let cols = self.coupling.sum_axis(ndarray::Axis(0));
        let r = rows
            .iter()
            .zip(self.row_marginal.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let c = cols
            .iter()
            .zip(self.col_marginal.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        r.max(c)
    }

    pub fn count_above(&self, threshold: f64) -> usize {
        self.coupling.iter().filter(|&&g| g > threshold).count()
    }

    /// `⟨C, Γ⟩`.
    pub fn cost(&self, cost: &CostMatrix) -> f64 {
        (&self.coupling * cost.entries()).sum()
    }

    pub fn transpose(&self) -> Self {
        Self {
            coupling: self.coupling.t().to_owned(),
            row_marginal: self.col_marginal.clone(),
            col_marginal: self.row_marginal.clone(),
        }
    }

    /// For each row, the column receiving most of its mass.
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.coupling
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |best, (j, &g)| if g > best.1 { (j, g) } else { best },
                    )
                    .0
            })
            .collect()
    }
}

/// Optimal dual variables of the transportation LP.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotentials {
    pub alpha: Array1<f64>,
    pub beta: Array1<f64>,
}

impl DualPotentials {
    /// `max_ij (α_i + β_j − C_ij)`; non-positive for a feasible dual.
    pub fn max_violation(&self, cost: &CostMatrix) -> f64 {
        let c = cost.entries();
        let mut worst = f64::NEG_INFINITY;
        for (i, a) in self.alpha.iter().enumerate() {
            for (j, b) in self.beta.iter().enumerate() {
                worst = worst.max(a + b - c[[i, j]]);
            }
        }
        worst
    }

    pub fn objective(&self, p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> f64 {
        self.alpha.dot(&p) + self.beta.dot(&q)
    }
}

/// Solver limits for [`solve_emd_with`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EmdConfig {
    /// Pivot cap; `None` means `50·(n+m)`.
    pub max_pivots: Option<usize>,
    /// Consecutive degenerate pivots tolerated before switching to Bland's
    /// rule; `None` means `n+m`.
    pub stall_limit: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct EmdSolution {
    pub plan: TransportPlan,
    pub cost: f64,
    pub duals: DualPotentials,
    pub pivots: usize,
}

/// Exact optimal transport between `p` and `q` under `cost`.
pub fn solve_emd(cost: &CostMatrix, p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> Result<EmdSolution> {
    solve_emd_with(cost, p, q, &EmdConfig::default())
}

pub fn solve_emd_with(
    cost: &CostMatrix,
    p: ArrayView1<'_, f64>,
    q: ArrayView1<'_, f64>,
    cfg: &EmdConfig,
) -> Result<EmdSolution> {
    let (n, m) = cost.dim();
    if p.len() != n || q.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "cost is {n}x{m}, marginals have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("empty transport problem".into()));
    }
    let (p, q) = checked_marginals(p, q)?;
    // Perturbed supplies p_i + δ with the excess n·δ on the last demand keep
    // every basic flow positive, so no pivot is degenerate. Flows are then
    // recomputed on the final tree from the true marginals.
    let delta = PERTURBATION / n as f64;
    let pp = &p + delta;
    let mut qq = q.clone();
    qq[m - 1] += n as f64 * delta;
    let mut simplex = NetworkSimplex::new(cost.entries().view(), &pp, &qq);
    let max_pivots = cfg.max_pivots.unwrap_or(50 * (n + m));
    let stall_limit = cfg.stall_limit.unwrap_or(n + m);
    let pivots = simplex.run(max_pivots, stall_limit)?;
    simplex.restore_flows(&p, &q);
    Ok(simplex.into_solution(p, q, pivots))
}

/// Rescale marginals to sum exactly to one; reject if they are not both
/// probability vectors within 1e-9.
fn checked_marginals(p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    if p.iter().chain(q.iter()).any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument(
            "marginals must be finite and non-negative".into(),
        ));
    }
    let (sp, sq) = (p.sum(), q.sum());
    if (sp - sq).abs() > MARGINAL_TOL || (sp - 1.0).abs() > MARGINAL_TOL {
        return Err(Error::InfeasibleMarginals(sp, sq));
    }
    Ok((p.to_owned() / sp, q.to_owned() / sq))
}

/// 2-Wasserstein distance under squared Euclidean ground cost.
pub fn wasserstein2(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    let cost = CostMatrix::squared_euclidean(a.support(), b.support())?;
    let sol = solve_emd(&cost, a.weights(), b.weights())?;
    Ok(sol.cost.max(0.0).sqrt())
}

/// Exact 1-D transport under squared cost: the monotone (north-west corner on
/// sorted values) coupling. Returns the plan and its cost.
pub fn emd_1d(
    x: ArrayView1<'_, f64>,
    p: ArrayView1<'_, f64>,
    y: ArrayView1<'_, f64>,
    q: ArrayView1<'_, f64>,
) -> Result<(TransportPlan, f64)> {
    if x.len() != p.len() || y.len() != q.len() {
        return Err(Error::DimensionMismatch(
            "1-D values and weights differ in length".into(),
        ));
    }
    let (p, q) = checked_marginals(p, q)?;
    let mut ix: Vec<usize> = (0..x.len()).collect();
    let mut iy: Vec<usize> = (0..y.len()).collect();
    ix.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    iy.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));

    let mut coupling = Array2::<f64>::zeros((x.len(), y.len()));
    let mut cost = 0.0;
    let (mut a, mut b) = (0, 0);
    let (mut rp, mut rq) = (p[ix[0]], q[iy[0]]);
    loop {
        let (i, j) = (ix[a], iy[b]);
        let last_row = a + 1 == ix.len();
        let last_col = b + 1 == iy.len();
        let mass = if last_row {
            rq
        } else if last_col {
            rp
        } else {
            rp.min(rq)
        };
        let mass = mass.max(0.0);
        coupling[[i, j]] += mass;
        cost += mass * (x[i] - y[j]) * (x[i] - y[j]);
        if last_row && last_col {
            break;
        }
        rp -= mass;
        rq -= mass;
        if !last_row && (rp <= rq || last_col) {
            a += 1;
            rp = p[ix[a]];
        } else {
            b += 1;
            rq = q[iy[b]];
        }
    }
    Ok((TransportPlan::from_parts_unchecked(coupling, p, q), cost))
}

struct NetworkSimplex<'a> {
    cost: ArrayView2<'a, f64>,
    n: usize,
    m: usize,
    /// Basic cells as (row, col) and their flow.
    cells: Vec<(usize, usize)>,
    flow: Vec<f64>,
    /// `basic[i*m+j]` is the slot in `cells`, or NONE.
    basic: Vec<usize>,
    /// Per node (rows then columns), the basic slots incident to it.
    adjacency: Vec<Vec<usize>>,
    parent: Vec<usize>,
    parent_cell: Vec<usize>,
    depth: Vec<usize>,
    potential: Vec<f64>,
    next_arc: usize,
    block: usize,
    eps: f64,
}

impl<'a> NetworkSimplex<'a> {
    fn new(cost: ArrayView2<'a, f64>, p: &Array1<f64>, q: &Array1<f64>) -> Self {
        let (n, m) = cost.dim();
        let nodes = n + m;
        let cmax = cost.iter().cloned().fold(0.0, f64::max);
        let mut s = Self {
            cost,
            n,
            m,
            cells: Vec::with_capacity(nodes - 1),
            flow: Vec::with_capacity(nodes - 1),
            basic: vec![NONE; n * m],
            adjacency: vec![Vec::new(); nodes],
            parent: vec![NONE; nodes],
            parent_cell: vec![NONE; nodes],
            depth: vec![0; nodes],
            potential: vec![0.0; nodes],
            next_arc: 0,
            block: ((n * m) as f64).sqrt().ceil().max(16.0) as usize,
            eps: 1e-12 * cmax.max(1e-300),
        };
        s.initial_basis(p, q);
        s.rebuild_tree();
        s
    }

    /// Least-cost-first allocation. Every allocation retires exactly one row or
    /// column (both only on the last cell), so the result is a spanning tree
    /// with n+m-1 cells.
    fn initial_basis(&mut self, p: &Array1<f64>, q: &Array1<f64>) {
        let (n, m) = (self.n, self.m);
        let mut order: Vec<usize> = (0..n * m).collect();
        order.sort_by(|&a, &b| {
            self.cost[[a / m, a % m]]
                .total_cmp(&self.cost[[b / m, b % m]])
                .then(a.cmp(&b))
        });
        let mut rp = p.to_vec();
        let mut rq = q.to_vec();
        let mut row_alive = vec![true; n];
        let mut col_alive = vec![true; m];
        let (mut rows_left, mut cols_left) = (n, m);
        for idx in order {
            let (i, j) = (idx / m, idx % m);
            if !row_alive[i] || !col_alive[j] {
                continue;
            }
            let retire_row = if rows_left == 1 && cols_left == 1 {
                None
            } else if rows_left == 1 {
                Some(false)
            } else if cols_left == 1 {
                Some(true)
            } else {
                Some(rp[i] <= rq[j])
            };
            let mass = match retire_row {
                None => rp[i].min(rq[j]).max(0.0),
                Some(true) => rp[i].max(0.0),
                Some(false) => rq[j].max(0.0),
            };
            self.add_cell(i, j, mass);
            match retire_row {
                None => break,
                Some(true) => {
                    row_alive[i] = false;
                    rows_left -= 1;
                    rq[j] -= mass;
                }
                Some(false) => {
                    col_alive[j] = false;
                    cols_left -= 1;
                    rp[i] -= mass;
                }
            }
        }
        debug_assert_eq!(self.cells.len(), n + m - 1);
    }

    fn add_cell(&mut self, i: usize, j: usize, mass: f64) -> usize {
        let slot = self.cells.len();
        self.cells.push((i, j));
        self.flow.push(mass);
        self.basic[i * self.m + j] = slot;
        self.adjacency[i].push(slot);
        self.adjacency[self.n + j].push(slot);
        slot
    }

    fn other_end(&self, slot: usize, node: usize) -> usize {
        let (i, j) = self.cells[slot];
        if node == i {
            self.n + j
        } else {
            i
        }
    }

    fn cell_cost(&self, slot: usize) -> f64 {
        let (i, j) = self.cells[slot];
        self.cost[[i, j]]
    }

    /// Sets parent/depth/potential for every node reachable from `start`
    /// without crossing back to `start`'s parent.
    fn relabel_from(&mut self, start: usize) {
        let mut stack = vec![start];
        while let Some(node) = stack.pop() {
            for k in 0..self.adjacency[node].len() {
                let slot = self.adjacency[node][k];
                if slot == self.parent_cell[node] {
                    continue;
                }
                let child = self.other_end(slot, node);
                self.parent[child] = node;
                self.parent_cell[child] = slot;
                self.depth[child] = self.depth[node] + 1;
                // u_i + v_j = c_ij on basic cells
                self.potential[child] = self.cell_cost(slot) - self.potential[node];
                stack.push(child);
            }
        }
    }

    fn rebuild_tree(&mut self) {
        self.parent[0] = NONE;
        self.parent_cell[0] = NONE;
        self.depth[0] = 0;
        self.potential[0] = 0.0;
        self.relabel_from(0);
    }

    #[inline]
    fn reduced_cost(&self, i: usize, j: usize) -> f64 {
        self.cost[[i, j]] - self.potential[i] - self.potential[self.n + j]
    }

    /// Block search: scan blocks of arcs cyclically, return the most negative
    /// reduced cost of the first block that contains one.
    fn price_block(&mut self) -> Option<(usize, usize)> {
        let total = self.n * self.m;
        let mut best = None;
        let mut best_rc = -self.eps;
        let mut scanned = 0;
        let mut in_block = 0;
        let mut arc = self.next_arc;
        while scanned < total {
            let (i, j) = (arc / self.m, arc % self.m);
            if self.basic[arc] == NONE {
                let rc = self.reduced_cost(i, j);
                if rc < best_rc {
                    best_rc = rc;
                    best = Some((i, j));
                }
            }
            scanned += 1;
            in_block += 1;
            arc += 1;
            if arc == total {
                arc = 0;
            }
            if in_block == self.block {
                if best.is_some() {
                    break;
                }
                in_block = 0;
            }
        }
        self.next_arc = arc;
        best
    }

    /// Bland's rule: lowest-index arc with negative reduced cost.
    fn price_bland(&self) -> Option<(usize, usize)> {
        (0..self.n * self.m)
            .filter(|&arc| self.basic[arc] == NONE)
            .map(|arc| (arc / self.m, arc % self.m))
            .find(|&(i, j)| self.reduced_cost(i, j) < -self.eps)
    }

    /// Tree path from column node of `j` to row node `i`, as basic slots in
    /// order. Arcs at even positions lose flow when `(i, j)` enters.
    fn cycle_path(&self, i: usize, j: usize) -> (Vec<usize>, usize) {
        let mut a = i;
        let mut b = self.n + j;
        let mut from_b = Vec::new();
        let mut from_a = Vec::new();
        while self.depth[a] > self.depth[b] {
            from_a.push(self.parent_cell[a]);
            a = self.parent[a];
        }
        while self.depth[b] > self.depth[a] {
            from_b.push(self.parent_cell[b]);
            b = self.parent[b];
        }
        while a != b {
            from_a.push(self.parent_cell[a]);
            a = self.parent[a];
            from_b.push(self.parent_cell[b]);
            b = self.parent[b];
        }
        let split = from_b.len();
        from_b.extend(from_a.into_iter().rev());
        (from_b, split)
    }

    fn run(&mut self, max_pivots: usize, stall_limit: usize) -> Result<usize> {
        let mut pivots = 0;
        let mut stalled = 0;
        loop {
            let bland = stalled >= stall_limit;
            let entering = if bland { self.price_bland() } else { self.price_block() };
            let Some((i, j)) = entering else {
                return Ok(pivots);
            };
            if pivots >= max_pivots {
                return Err(Error::NonConvergence {
                    solver: "network simplex",
                    iterations: pivots,
                });
            }
            pivots += 1;

            let (path, split) = self.cycle_path(i, j);
            let mut theta = f64::INFINITY;
            let mut leave_pos = NONE;
            for (pos, &slot) in path.iter().enumerate().step_by(2) {
                let f = self.flow[slot];
                let better = if bland {
                    let (r, c) = self.cells[slot];
                    let key = r * self.m + c;
                    f < theta
                        || (f == theta && {
                            let (lr, lc) = self.cells[path[leave_pos]];
                            key < lr * self.m + lc
                        })
                } else {
                    f < theta
                };
                if better {
                    theta = f;
                    leave_pos = pos;
                }
            }
            let theta = theta.max(0.0);
            if theta <= 1e-15 {
                stalled += 1;
            } else {
                stalled = 0;
            }

            for (pos, &slot) in path.iter().enumerate() {
                if pos % 2 == 0 {
                    self.flow[slot] = (self.flow[slot] - theta).max(0.0);
                } else {
                    self.flow[slot] += theta;
                }
            }

            let leaving = path[leave_pos];
            let (li, lj) = self.cells[leaving];
            let (lu, lv) = (li, self.n + lj);
            // the endpoint of the entering arc cut off from the root
            let detached_side = if leave_pos < split { self.n + j } else { i };
            let anchor = if detached_side == i { self.n + j } else { i };

            // replace the leaving slot in place
            self.basic[li * self.m + lj] = NONE;
            self.adjacency[lu].retain(|&s| s != leaving);
            self.adjacency[lv].retain(|&s| s != leaving);
            self.cells[leaving] = (i, j);
            self.flow[leaving] = theta;
            self.basic[i * self.m + j] = leaving;
            self.adjacency[i].push(leaving);
            self.adjacency[self.n + j].push(leaving);

            self.parent[detached_side] = anchor;
            self.parent_cell[detached_side] = leaving;
            self.depth[detached_side] = self.depth[anchor] + 1;
            self.potential[detached_side] = self.cost[[i, j]] - self.potential[anchor];
            self.relabel_from(detached_side);
        }
    }

    /// Tree flows for supplies `p` and demands `q`, from subtree balances
    /// accumulated leaves first.
    fn restore_flows(&mut self, p: &Array1<f64>, q: &Array1<f64>) {
        let mut net: Vec<f64> = p.iter().copied().chain(q.iter().map(|w| -w)).collect();
        let mut order: Vec<usize> = (1..self.n + self.m).collect();
        order.sort_by_key(|&v| std::cmp::Reverse(self.depth[v]));
        for v in order {
            let slot = self.parent_cell[v];
            let f = if v < self.n { net[v] } else { -net[v] };
            self.flow[slot] = f.max(0.0);
            net[self.parent[v]] += net[v];
        }
    }

    fn into_solution(self, p: Array1<f64>, q: Array1<f64>, pivots: usize) -> EmdSolution {
        let mut coupling = Array2::<f64>::zeros((self.n, self.m));
        let mut cost = 0.0;
        for (slot, &(i, j)) in self.cells.iter().enumerate() {
            coupling[[i, j]] = self.flow[slot];
            cost += self.flow[slot] * self.cost[[i, j]];
        }
        let mut alpha = Array1::from_iter(self.potential[..self.n].iter().cloned());
        let mut beta = Array1::from_iter(self.potential[self.n..].iter().cloned());
        // fix the null direction: alpha has zero mean under p
        let shift = alpha.dot(&p);
        alpha -= shift;
        beta += shift;
        EmdSolution {
            plan: TransportPlan::from_parts_unchecked(coupling, p, q),
            cost,
            duals: DualPotentials { alpha, beta },
            pivots,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn solve(c: Array2<f64>, p: Array1<f64>, q: Array1<f64>) -> EmdSolution {
        solve_emd(&CostMatrix::new(c).unwrap(), p.view(), q.view()).unwrap()
    }

    #[test]
    fn single_cell() {
        let s = solve(array![[0.0]], array![1.0], array![1.0]);
        assert_eq!(s.plan.coupling(), &array![[1.0]]);
        assert_eq!(s.cost, 0.0);
    }

    #[test]
    fn zero_cost_matching() {
        let s = solve(array![[0.0, 1.0], [1.0, 0.0]], array![0.5, 0.5], array![0.5, 0.5]);
        assert_eq!(s.plan.coupling(), &array![[0.5, 0.0], [0.0, 0.5]]);
        assert_eq!(s.cost, 0.0);
    }

    #[test]
    fn two_by_two_vertex() {
        // vertices of the 2x2 polytope are parametrized by Γ11 ∈ {0.1, 0.4}:
        // Γ11=0.4 -> 0.4 + 0.6 + 0 + 0.3 = 1.3, Γ11=0.1 -> 0.1 + 1.2 + 0.9 + 0 = 2.2
        let s = solve(array![[1.0, 2.0], [3.0, 1.0]], array![0.7, 0.3], array![0.4, 0.6]);
        assert!((s.cost - 1.3).abs() < 1e-12);
        let expected = array![[0.4, 0.3], [0.0, 0.3]];
        assert!((s.plan.coupling() - &expected).mapv(f64::abs).sum() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_mass() {
        let c = CostMatrix::new(array![[0.0, 1.0]]).unwrap();
        let err = solve_emd(&c, array![1.0].view(), array![0.5, 0.4].view()).unwrap_err();
        assert!(matches!(err, Error::InfeasibleMarginals(..)));
        let err = solve_emd(&c, array![1.0, 0.0].view(), array![0.5, 0.5].view()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn pivot_cap_reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = CostMatrix::new(Array2::from_shape_fn((20, 20), |_| rng.random::<f64>())).unwrap();
        let p = Array1::from_elem(20, 0.05);
        let cfg = EmdConfig {
            max_pivots: Some(0),
            stall_limit: None,
        };
        let err = solve_emd_with(&c, p.view(), p.view(), &cfg).unwrap_err();
        assert!(err.is_non_convergence());
    }

    #[test]
    fn degenerate_uniform_square_problems() {
        // uniform equal-size marginals are maximally degenerate
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [5, 17, 40] {
            let c = CostMatrix::new(Array2::from_shape_fn((n, n), |_| rng.random::<f64>())).unwrap();
            let p = Array1::from_elem(n, 1.0 / n as f64);
            let s = solve_emd(&c, p.view(), p.view()).unwrap();
            assert!(s.plan.marginal_defect() < 1e-12);
            assert!(s.duals.max_violation(&c) < 1e-9);
            assert!((s.duals.objective(p.view(), p.view()) - s.cost).abs() < 1e-9);
        }
    }

    #[test]
    fn large_permutation_problem_terminates() {
        // an exact relabeled copy: the optimum is a zero-cost permutation and
        // every basis along the way is heavily degenerate
        let a = crate::shapes::dog_2d(300).unwrap();
        let perm: Vec<usize> = (0..300).map(|i| (i * 7 + 3) % 300).collect();
        let b = crate::measure::apply_isometry(
            &a,
            &crate::measure::PermutedIsometry::new(perm, Array2::eye(2)).unwrap(),
        )
        .unwrap();
        let c = CostMatrix::squared_euclidean(a.support(), b.support()).unwrap();
        let s = solve_emd(&c, a.weights(), b.weights()).unwrap();
        assert!(s.cost < 1e-12, "{}", s.cost);
        assert!(s.plan.marginal_defect() < 1e-12);
        assert!(s.duals.max_violation(&c) < 1e-9);
    }

    #[test]
    fn bland_rule_path_still_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 25;
        let c = CostMatrix::new(Array2::from_shape_fn((n, n), |_| rng.random_range(0..3) as f64)).unwrap();
        let p = Array1::from_elem(n, 1.0 / n as f64);
        let cfg = EmdConfig {
            max_pivots: None,
            stall_limit: Some(0),
        };
        let a = solve_emd_with(&c, p.view(), p.view(), &cfg).unwrap();
        let b = solve_emd(&c, p.view(), p.view()).unwrap();
        assert!((a.cost - b.cost).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_examples() {
        let a = DiscreteMeasure::uniform(array![[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        assert!(wasserstein2(&a, &a).unwrap().abs() < 1e-15);
        let b = DiscreteMeasure::uniform(array![[0.0, 1.0], [0.0, -1.0]]).unwrap();
        assert!((wasserstein2(&a, &b).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        let x = DiscreteMeasure::uniform(array![[0.0, 0.0]]).unwrap();
        let y = DiscreteMeasure::uniform(array![[0.0, 2.0]]).unwrap();
        assert!((wasserstein2(&x, &y).unwrap() - 2.0).abs() < 1e-15);
        let z = DiscreteMeasure::uniform(array![[0.0, 2.0, 1.0]]).unwrap();
        assert!(matches!(wasserstein2(&x, &z), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn one_dimensional_matches_general_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let n = rng.random_range(1..8);
            let m = rng.random_range(1..8);
            let x = Array1::from_shape_fn(n, |_| rng.random::<f64>());
            let y = Array1::from_shape_fn(m, |_| rng.random::<f64>());
            let p = Array1::from_shape_fn(n, |_| rng.random::<f64>() + 0.1);
            let q = Array1::from_shape_fn(m, |_| rng.random::<f64>() + 0.1);
            let (p, q) = (&p / p.sum(), &q / q.sum());
            let (plan, c1) = emd_1d(x.view(), p.view(), y.view(), q.view()).unwrap();
            assert!(plan.marginal_defect() < 1e-12);
            let cost = Array2::from_shape_fn((n, m), |(i, j)| (x[i] - y[j]).powi(2));
            let c2 = solve_emd(&CostMatrix::new(cost).unwrap(), p.view(), q.view())
                .unwrap()
                .cost;
            assert!((c1 - c2).abs() < 1e-12, "{c1} vs {c2}");
        }
    }
}
