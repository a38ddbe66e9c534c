//! k-nearest-neighbor graphs over point clouds, geodesic distances and the
//! Fiedler vector of the graph Laplacian.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use ndarray::{Array1, Array2};
use ordered_float::OrderedFloat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::measure::DiscreteMeasure;

/// Graphs up to this size get a dense eigen-decomposition.
pub const DENSE_EIGEN_LIMIT: usize = 2000;
const MULTIPLICITY_TOL: f64 = 1e-9;

/// Symmetric weighted graph; edge lengths are Euclidean distances.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    vertex_count: usize,
    k: usize,
    edges: Vec<(usize, usize, f64)>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl NeighborGraph {
    /// Builds a graph from an undirected edge list, merging duplicates.
    pub fn from_edges(vertex_count: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); vertex_count];
        let mut list = Vec::new();
        for (a, b, w) in edges {
            if a >= vertex_count || b >= vertex_count {
                return Err(Error::InvalidArgument(format!("edge ({a}, {b}) out of range")));
            }
            if a == b {
                continue;
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidArgument(format!("edge length {w} is invalid")));
            }
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if adjacency[lo].iter().any(|&(v, _)| v == hi) {
                continue;
            }
            adjacency[lo].push((hi, w));
            adjacency[hi].push((lo, w));
            list.push((lo, hi, w));
        }
        list.sort_by_key(|e| (e.0, e.1));
        Ok(Self {
            vertex_count,
            k: 0,
            edges: list,
            adjacency,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Edges as `(i, j, length)` with `i < j`.
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn is_connected(&self) -> bool {
        if self.vertex_count == 0 {
            return true;
        }
        let mut seen = vec![false; self.vertex_count];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &(w, _) in &self.adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == self.vertex_count
    }

    /// Unweighted Laplacian `D − A`.
    pub fn laplacian(&self) -> Array2<f64> {
        let n = self.vertex_count;
        let mut l = Array2::<f64>::zeros((n, n));
        for &(a, b, _) in &self.edges {
            l[[a, b]] -= 1.0;
            l[[b, a]] -= 1.0;
            l[[a, a]] += 1.0;
            l[[b, b]] += 1.0;
        }
        l
    }

    fn laplacian_apply(&self, x: &Array1<f64>) -> Array1<f64> {
        Array1::from_shape_fn(self.vertex_count, |v| {
            let nb = &self.adjacency[v];
            nb.len() as f64 * x[v] - nb.iter().map(|&(w, _)| x[w]).sum::<f64>()
        })
    }
}

/// Symmetric kNN graph: `i ~ j` when either selects the other among its `k`
/// nearest neighbors (ties broken by index).
pub fn build_knn_graph(measure: &DiscreteMeasure, k: usize) -> Result<NeighborGraph> {
    let graph = knn_graph_unchecked(measure, k)?;
    if !graph.is_connected() {
        return Err(Error::Disconnected);
    }
    Ok(graph)
}

fn knn_graph_unchecked(measure: &DiscreteMeasure, k: usize) -> Result<NeighborGraph> {
    let n = measure.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!("k = {k} must satisfy 1 <= k < n = {n}")));
    }
    let x = measure.support();
    let mut edges = Vec::with_capacity(n * k);
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        dist.clear();
        for j in 0..n {
            if j != i {
                let d: f64 = x
                    .row(i)
                    .iter()
                    .zip(x.row(j).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                dist.push((d, j));
            }
        }
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(d, j) in dist.iter().take(k) {
            edges.push((i, j, d.sqrt()));
        }
    }
    let mut graph = NeighborGraph::from_edges(n, edges)?;
    graph.k = k;
    Ok(graph)
}

/// kNN graph starting at `k`, doubling `k` (capped at `n − 1`) until the
/// graph is connected.
pub fn connected_knn_graph(measure: &DiscreteMeasure, k: usize) -> Result<NeighborGraph> {
    let n = measure.len();
    if n < 2 {
        return Err(Error::InvalidArgument("a graph needs at least two points".into()));
    }
    let mut k = k.clamp(1, n - 1);
    loop {
        let graph = knn_graph_unchecked(measure, k)?;
        if graph.is_connected() {
            return Ok(graph);
        }
        if k == n - 1 {
            return Err(Error::Disconnected);
        }
        k = (2 * k).min(n - 1);
    }
}

/// All-pairs shortest-path lengths (Dijkstra from every vertex).
pub fn geodesic_distances(graph: &NeighborGraph) -> Result<Array2<f64>> {
    let n = graph.vertex_count;
    let mut out = Array2::<f64>::from_elem((n, n), f64::INFINITY);
    for source in 0..n {
        let mut heap = BinaryHeap::new();
        out[[source, source]] = 0.0;
        heap.push(Reverse((OrderedFloat(0.0), source)));
        while let Some(Reverse((OrderedFloat(d), v))) = heap.pop() {
            if d > out[[source, v]] {
                continue;
            }
            for &(w, len) in &graph.adjacency[v] {
                let nd = d + len;
                if nd < out[[source, w]] {
                    out[[source, w]] = nd;
                    heap.push(Reverse((OrderedFloat(nd), w)));
                }
            }
        }
        if out.row(source).iter().any(|d| d.is_infinite()) {
            return Err(Error::Disconnected);
        }
    }
    // symmetrize away last-bit asymmetries of the two search directions
    for i in 0..n {
        for j in (i + 1)..n {
            let m = out[[i, j]].min(out[[j, i]]);
            out[[i, j]] = m;
            out[[j, i]] = m;
        }
    }
    Ok(out)
}

/// Fiedler pair of a connected graph: the eigenvector of the unweighted
/// Laplacian for its second-smallest eigenvalue.
#[derive(Debug, Clone)]
pub struct FiedlerPair {
    pub algebraic_connectivity: f64,
    pub third_eigenvalue: f64,
    /// Unit-norm eigenvector, sign fixed so its largest-magnitude entry is
    /// positive.
    pub vector: Array1<f64>,
}

/// Unit-norm Fiedler eigenpair (dense for small graphs, subspace inverse
/// iteration above [`DENSE_EIGEN_LIMIT`]).
pub fn fiedler_pair(graph: &NeighborGraph) -> Result<FiedlerPair> {
    fiedler_pair_with_limit(graph, DENSE_EIGEN_LIMIT)
}

pub(crate) fn fiedler_pair_with_limit(graph: &NeighborGraph, dense_limit: usize) -> Result<FiedlerPair> {
    let n = graph.vertex_count;
    if n < 2 {
        return Err(Error::InvalidArgument(
            "Fiedler vector needs at least two vertices".into(),
        ));
    }
    if !graph.is_connected() {
        return Err(Error::Disconnected);
    }
    let (lambda2, lambda3, mut vector) = if n <= dense_limit {
        let (values, vectors) = linalg::symmetric_eigen(&graph.laplacian());
        let third = if n > 2 { values[2] } else { f64::INFINITY };
        (values[1], third, vectors.column(1).to_owned())
    } else {
        inverse_subspace_iteration(graph)?
    };
    if (lambda3 - lambda2).abs() < MULTIPLICITY_TOL {
        return Err(Error::EigenMultiplicity(lambda2, lambda3));
    }
    let norm = vector.dot(&vector).sqrt();
    vector /= norm;
    let pivot = vector
        .iter()
        .enumerate()
        .fold(
            (0, 0.0_f64),
            |best, (i, &v)| if v.abs() > best.1.abs() + 1e-12 { (i, v) } else { best },
        )
        .0;
    if vector[pivot] < 0.0 {
        vector.mapv_inplace(|v| -v);
    }
    Ok(FiedlerPair {
        algebraic_connectivity: lambda2,
        third_eigenvalue: lambda3,
        vector,
    })
}

/// Fiedler vector standardized to zero mean and unit standard deviation.
pub fn fiedler_vector(graph: &NeighborGraph) -> Result<Array1<f64>> {
    Ok(standardize(&fiedler_pair(graph)?.vector))
}

pub fn standardize(v: &Array1<f64>) -> Array1<f64> {
    let mean = v.mean().unwrap_or(0.0);
    let centered = v.mapv(|x| x - mean);
    let std = (centered.dot(&centered) / v.len() as f64).sqrt();
    if std > 0.0 {
        centered / std
    } else {
        centered
    }
}

/// Two-vector block inverse iteration on the complement of the constant
/// vector, with conjugate-gradient solves and a Rayleigh-Ritz step.
fn inverse_subspace_iteration(graph: &NeighborGraph) -> Result<(f64, f64, Array1<f64>)> {
    let n = graph.vertex_count;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut block: Vec<Array1<f64>> = (0..2)
        .map(|_| Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5))
        .collect();
    orthonormalize(&mut block);
    let mut previous = (f64::INFINITY, f64::INFINITY);
    for _ in 0..500 {
        let mut next: Vec<Array1<f64>> = block.iter().map(|b| cg_solve(graph, b)).collect();
        orthonormalize(&mut next);
        let lx: Vec<Array1<f64>> = next.iter().map(|x| graph.laplacian_apply(x)).collect();
        let h = ndarray::array![
            [next[0].dot(&lx[0]), next[0].dot(&lx[1])],
            [next[1].dot(&lx[0]), next[1].dot(&lx[1])]
        ];
        let (vals, vecs) = linalg::symmetric_eigen(&h);
        block = (0..2)
            .map(|c| &next[0] * vecs[[0, c]] + &next[1] * vecs[[1, c]])
            .collect();
        let converged = (vals[0] - previous.0).abs() <= 1e-13 * vals[0].abs().max(1e-12)
            && (vals[1] - previous.1).abs() <= 1e-11 * vals[1].abs().max(1e-12);
        previous = (vals[0], vals[1]);
        if converged {
            break;
        }
    }
    Ok((previous.0, previous.1, block.swap_remove(0)))
}

fn remove_mean(v: &mut Array1<f64>) {
    let mean = v.mean().unwrap_or(0.0);
    v.mapv_inplace(|x| x - mean);
}

fn orthonormalize(block: &mut [Array1<f64>]) {
    for i in 0..block.len() {
        remove_mean(&mut block[i]);
        for j in 0..i {
            let proj = block[i].dot(&block[j]);
            let bj = block[j].clone();
            block[i].scaled_add(-proj, &bj);
        }
        let norm = block[i].dot(&block[i]).sqrt();
        block[i] /= norm.max(1e-300);
    }
}

/// Solves `L x = b` for `b ⟂ 1` by conjugate gradients.
fn cg_solve(graph: &NeighborGraph, b: &Array1<f64>) -> Array1<f64> {
    let mut rhs = b.clone();
    remove_mean(&mut rhs);
    let mut x = Array1::<f64>::zeros(rhs.len());
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    let target = 1e-24 * rs.max(1e-300);
    for _ in 0..(10 * rhs.len()) {
        if rs <= target {
            break;
        }
        let ap = graph.laplacian_apply(&p);
        let alpha = rs / p.dot(&ap);
        x.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &ap);
        let rs_new = r.dot(&r);
        p = &r + &(&p * (rs_new / rs));
        rs = rs_new;
    }
    remove_mean(&mut x);
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn path(lengths: &[f64]) -> NeighborGraph {
        NeighborGraph::from_edges(
            lengths.len() + 1,
            lengths.iter().enumerate().map(|(i, &l)| (i, i + 1, l)),
        )
        .unwrap()
    }

    fn complete(n: usize) -> NeighborGraph {
        let edges = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j, 1.0)));
        NeighborGraph::from_edges(n, edges).unwrap()
    }

    /// Cyclic Jacobi eigenvalue iteration, independent of the library path.
    fn jacobi_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
        let n = a.nrows();
        let mut m = a.clone();
        let mut v = Array2::<f64>::eye(n);
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|(i, j)| i != j)
                .map(|(i, j)| m[[i, j]].powi(2))
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if m[[p, q]].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * m[[p, q]]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (mkp, mkq) = (m[[k, p]], m[[k, q]]);
                        m[[k, p]] = c * mkp - s * mkq;
                        m[[k, q]] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let (mpk, mqk) = (m[[p, k]], m[[q, k]]);
                        m[[p, k]] = c * mpk - s * mqk;
                        m[[q, k]] = s * mpk + c * mqk;
                    }
                    for k in 0..n {
                        let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                        v[[k, p]] = c * vkp - s * vkq;
                        v[[k, q]] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| m[[i, i]].total_cmp(&m[[j, j]]));
        let vals = order.iter().map(|&i| m[[i, i]]).collect();
        let vecs = Array2::from_shape_fn((n, n), |(r, c)| v[[r, order[c]]]);
        (vals, vecs)
    }

    #[test]
    fn knn_examples() {
        let line = DiscreteMeasure::uniform(array![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).unwrap();
        let g = build_knn_graph(&line, 1).unwrap();
        assert_eq!(g.edges().len(), 2);
        assert_eq!(g.edges()[0].0, 0);
        assert_eq!(g.edges()[1], (1, 2, 1.0));

        let cloud = DiscreteMeasure::uniform(array![[0.0, 0.0], [1.0, 0.3], [2.0, 5.0], [0.2, 0.9]]).unwrap();
        let g = build_knn_graph(&cloud, 3).unwrap();
        assert_eq!(g.edges().len(), 6);

        let clusters = DiscreteMeasure::uniform(array![[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [10.1, 0.0]]).unwrap();
        assert_eq!(build_knn_graph(&clusters, 1), Err(Error::Disconnected));
        assert!(connected_knn_graph(&clusters, 1).unwrap().k() >= 2);
        assert!(build_knn_graph(&clusters, 4).is_err());
    }

    #[test]
    fn knn_graph_is_symmetric_without_self_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DiscreteMeasure::uniform(Array2::from_shape_fn((40, 2), |_| rng.random::<f64>())).unwrap();
        let g = connected_knn_graph(&m, 4).unwrap();
        for v in 0..40 {
            for &(w, len) in g.neighbors(v) {
                assert_ne!(v, w);
                assert!(g.neighbors(w).iter().any(|&(x, l)| x == v && l == len));
            }
        }
    }

    #[test]
    fn geodesic_examples() {
        let d = geodesic_distances(&path(&[1.0, 1.0])).unwrap();
        assert_eq!(d[[0, 2]], 2.0);
        let d = geodesic_distances(&path(&[1.0, 2.0])).unwrap();
        assert_eq!(d[[0, 2]], 3.0);
        let d = geodesic_distances(&complete(4)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(d[[i, j]], if i == j { 0.0 } else { 1.0 });
            }
        }
        let split = NeighborGraph::from_edges(4, [(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        assert_eq!(geodesic_distances(&split), Err(Error::Disconnected));
    }

    #[test]
    fn geodesic_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = DiscreteMeasure::uniform(Array2::from_shape_fn((30, 3), |_| rng.random::<f64>())).unwrap();
        let d = geodesic_distances(&connected_knn_graph(&m, 3).unwrap()).unwrap();
        for i in 0..30 {
            assert_eq!(d[[i, i]], 0.0);
            for j in 0..30 {
                assert_eq!(d[[i, j]], d[[j, i]]);
                for k in 0..30 {
                    assert!(d[[i, j]] <= d[[i, k]] + d[[k, j]] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn fiedler_path3_matches_oracle() {
        let g = path(&[1.0, 1.0]);
        let (vals, vecs) = jacobi_eigen(&g.laplacian());
        assert!((vals[1] - 1.0).abs() < 1e-12);
        let pair = fiedler_pair(&g).unwrap();
        assert!((pair.algebraic_connectivity - vals[1]).abs() < 1e-12);
        let overlap = pair.vector.dot(&vecs.column(1)).abs();
        assert!((overlap - 1.0).abs() < 1e-12);
        // ∝ (1, 0, −1)
        assert!(pair.vector[1].abs() < 1e-12);
        assert!((pair.vector[0] + pair.vector[2]).abs() < 1e-12);
    }

    #[test]
    fn fiedler_path4_is_monotone() {
        let g = path(&[1.0, 1.0, 1.0]);
        let (vals, vecs) = jacobi_eigen(&g.laplacian());
        let f = fiedler_vector(&g).unwrap();
        let oracle = standardize(&vecs.column(1).to_owned());
        let sign = if f.dot(&oracle) > 0.0 { 1.0 } else { -1.0 };
        assert!((&f - &(oracle * sign)).mapv(f64::abs).sum() < 1e-10);
        assert!((fiedler_pair(&g).unwrap().algebraic_connectivity - vals[1]).abs() < 1e-12);
        let increasing = f.windows(2).into_iter().all(|w| w[1] > w[0]);
        let decreasing = f.windows(2).into_iter().all(|w| w[1] < w[0]);
        assert!(increasing || decreasing);
        assert!(f.mean().unwrap().abs() < 1e-12);
        assert!(((f.dot(&f) / 4.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fiedler_rejects_symmetric_graphs() {
        assert!(matches!(
            fiedler_vector(&complete(3)),
            Err(Error::EigenMultiplicity(..))
        ));
        let split = NeighborGraph::from_edges(4, [(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        assert_eq!(fiedler_vector(&split).unwrap_err(), Error::Disconnected);
    }

    #[test]
    fn iterative_path_agrees_with_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pts = Array2::from_shape_fn((150, 2), |(_, c)| {
            if c == 0 {
                3.0 * rng.random::<f64>()
            } else {
                rng.random::<f64>()
            }
        });
        let m = DiscreteMeasure::uniform(pts).unwrap();
        let g = connected_knn_graph(&m, 6).unwrap();
        let dense = fiedler_pair_with_limit(&g, usize::MAX).unwrap();
        let iterative = fiedler_pair_with_limit(&g, 0).unwrap();
        assert!((dense.algebraic_connectivity - iterative.algebraic_connectivity).abs() < 1e-9);
        let overlap = dense.vector.dot(&iterative.vector).abs();
        assert!((overlap - 1.0).abs() < 1e-8, "overlap {overlap}");
    }
}
