//! Weighted Euclidean k-means, used to compress a cloud to a fixed number of
//! points.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;

pub const DEFAULT_KMEANS_ITERS: usize = 50;

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd iterations from a weighted k-means++ seeding. Returns the `k`
/// centers; a center that loses all its points stays where it was.
pub fn euclidean_kmeans(
    points: ArrayView2<'_, f64>,
    weights: ArrayView1<'_, f64>,
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let (n, d) = points.dim();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot pick {k} centers from {n} points"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Array2::<f64>::zeros((k, d));
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&points.row(first));
    chosen[first] = true;
    let mut nearest: Array1<f64> = (0..n).map(|i| sq_dist(points.row(i), centers.row(0))).collect();
    for c in 1..k {
        let scores: Vec<f64> = (0..n)
            .map(|i| {
                if chosen[i] {
                    0.0
                } else {
                    weights[i].max(1e-300) * nearest[i]
                }
            })
            .collect();
        let total: f64 = scores.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, s) in scores.iter().enumerate() {
                if *s > 0.0 && target < *s {
                    pick = i;
                    break;
                }
                target -= s;
            }
            if chosen[pick] {
                (0..n).rev().find(|&i| !chosen[i]).unwrap_or(pick)
            } else {
                pick
            }
        } else {
            // remaining points coincide with centers
            (0..n).find(|&i| !chosen[i]).unwrap_or(0)
        };
        chosen[pick] = true;
        centers.row_mut(c).assign(&points.row(pick));
        for i in 0..n {
            nearest[i] = nearest[i].min(sq_dist(points.row(i), centers.row(c)));
        }
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..iters {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let best = (0..k)
                .map(|c| (sq_dist(points.row(i), centers.row(c)), c))
                .fold((f64::INFINITY, 0), |b, x| if x.0 < b.0 { x } else { b })
                .1;
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut mass = vec![0.0; k];
        for i in 0..n {
            let w = weights[i].max(1e-300);
            sums.row_mut(labels[i]).scaled_add(w, &points.row(i));
            mass[labels[i]] += w;
        }
        for (c, &m) in mass.iter().enumerate() {
            if m > 0.0 {
                let row = sums.row(c).mapv(|x| x / m);
                centers.row_mut(c).assign(&row);
            }
        }
    }
    Ok(centers)
}

/// Compresses a cloud to `size` points with uniform weights: k-means centers
/// when `size < n`, otherwise every point plus jittered copies of random
/// points.
pub fn compress(measure: &DiscreteMeasure, size: usize, seed: u64) -> Result<DiscreteMeasure> {
    let n = measure.len();
    if size == 0 {
        return Err(Error::InvalidArgument("target size must be at least 1".into()));
    }
    if size < n {
        let centers = euclidean_kmeans(measure.support(), measure.weights(), size, DEFAULT_KMEANS_ITERS, seed)?;
        return DiscreteMeasure::uniform(centers);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = measure.dim();
    let scale = 0.01 * measure.max_norm().max(1e-12);
    let mut pts = Array2::<f64>::zeros((size, d));
    for i in 0..size {
        let src = if i < n { i } else { rng.random_range(0..n) };
        pts.row_mut(i).assign(&measure.support().row(src));
        if i >= n {
            for c in 0..d {
                pts[[i, c]] += scale * (rng.random::<f64>() - 0.5);
            }
        }
    }
    DiscreteMeasure::uniform(pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn separates_obvious_clusters() {
        let pts = array![[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [5.0, 5.0], [5.1, 5.0], [5.0, 5.1]];
        let w = Array1::from_elem(6, 1.0 / 6.0);
        let c = euclidean_kmeans(pts.view(), w.view(), 2, 50, 3).unwrap();
        let mut xs: Vec<f64> = c.column(0).to_vec();
        xs.sort_by(f64::total_cmp);
        assert!((xs[0] - 0.1 / 3.0).abs() < 1e-12);
        assert!((xs[1] - 5.1 / 3.0 - 10.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn full_size_keeps_points() {
        let pts = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let m = DiscreteMeasure::uniform(pts.clone()).unwrap();
        let c = euclidean_kmeans(pts.view(), m.weights(), 3, 50, 0).unwrap();
        let mut rows: Vec<(f64, f64)> = c.rows().into_iter().map(|r| (r[0], r[1])).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rows, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 0.0)]);
        let bigger = compress(&m, 5, 1).unwrap();
        assert_eq!(bigger.len(), 5);
        assert_eq!(bigger.support().row(2), pts.row(2));
        assert!(euclidean_kmeans(pts.view(), m.weights(), 4, 50, 0).is_err());
    }

    #[test]
    fn deterministic_for_a_seed() {
        let m =
            DiscreteMeasure::uniform(Array2::from_shape_fn((40, 2), |(i, c)| ((i * 7 + c * 3) % 11) as f64)).unwrap();
        assert_eq!(compress(&m, 6, 9).unwrap(), compress(&m, 6, 9).unwrap());
    }
}
