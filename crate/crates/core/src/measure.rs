//! Discrete measures on point clouds and the transformations applied to them.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

const WEIGHT_SUM_TOL: f64 = 1e-9;

/// A probability measure `Σ pᵢ δ_{xᵢ}` supported on the rows of an n×d matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    support: Array2<f64>,
    weights: Array1<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure, rescaling the weights to sum exactly to one.
    ///
    /// Weights must be non-negative and already sum to one within 1e-9.
    pub fn new(support: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        let (n, d) = support.dim();
        if n == 0 || d == 0 {
            return Err(Error::InvalidMeasure(format!("empty support ({n}x{d})")));
        }
        if weights.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} support points but {} weights",
                weights.len()
            )));
        }
        if support.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite support coordinate".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidMeasure("weights must be finite and non-negative".into()));
        }
        let total = weights.sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self {
            support,
            weights: weights / total,
        })
    }

    /// Uniform weights `1/n` on every row of `support`.
    pub fn uniform(support: Array2<f64>) -> Result<Self> {
        let n = support.nrows();
        let weights = Array1::from_elem(n, 1.0 / n.max(1) as f64);
        Self::new(support, weights)
    }

    /// Builds a measure from unnormalized non-negative masses.
    pub fn from_masses(support: Array2<f64>, masses: Array1<f64>) -> Result<Self> {
        let total = masses.sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidMeasure(format!("total mass {total} is not positive")));
        }
        Self::new(support, masses / total)
    }

    pub fn support(&self) -> ArrayView2<'_, f64> {
        self.support.view()
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    pub fn len(&self) -> usize {
        self.support.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.support.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.support.ncols()
    }

    pub fn is_uniform(&self, tol: f64) -> bool {
        let target = 1.0 / self.len() as f64;
        self.weights.iter().all(|w| (w - target).abs() <= tol)
    }

    /// Unweighted arithmetic mean of the support rows.
    pub fn centroid(&self) -> Array1<f64> {
        self.support.mean_axis(Axis(0)).expect("non-empty support")
    }

    pub fn max_norm(&self) -> f64 {
        self.support
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0, f64::max)
    }

    /// Squared Euclidean norm of every support point.
    pub fn squared_norms(&self) -> Array1<f64> {
        Array1::from_iter(self.support.rows().into_iter().map(|r| r.dot(&r)))
    }

    /// Same weights on a new support of identical shape.
    pub fn with_support(&self, support: Array2<f64>) -> Result<Self> {
        if support.dim() != self.support.dim() {
            return Err(Error::DimensionMismatch(format!(
                "support shape {:?} differs from {:?}",
                support.dim(),
                self.support.dim()
            )));
        }
        Self::new(support, self.weights.clone())
    }

    /// Right-multiplies the support by `map` (rows are points).
    pub fn transformed(&self, map: &Array2<f64>) -> Result<Self> {
        if map.nrows() != self.dim() || map.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "map is {}x{}, measure dimension is {}",
                map.nrows(),
                map.ncols(),
                self.dim()
            )));
        }
        Ok(Self {
            support: self.support.dot(map),
            weights: self.weights.clone(),
        })
    }

    pub(crate) fn from_parts_unchecked(support: Array2<f64>, weights: Array1<f64>) -> Self {
        Self { support, weights }
    }
}

/// A relabeling of support points together with an orthogonal map; two
/// measures related by one of these are PW-equivalent.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutedIsometry {
    permutation: Vec<usize>,
    map: Array2<f64>,
}

impl PermutedIsometry {
    pub fn new(permutation: Vec<usize>, map: Array2<f64>) -> Result<Self> {
        let n = permutation.len();
        let mut seen = vec![false; n];
        for &s in &permutation {
            if s >= n || seen[s] {
                return Err(Error::InvalidArgument("permutation is not a bijection".into()));
            }
            seen[s] = true;
        }
        if map.nrows() != map.ncols() {
            return Err(Error::DimensionMismatch("orthogonal map must be square".into()));
        }
        if linalg::orthogonality_defect(&map) > 1e-9 {
            return Err(Error::InvalidArgument("map is not orthogonal".into()));
        }
        Ok(Self { permutation, map })
    }

    pub fn identity(n: usize, d: usize) -> Self {
        Self {
            permutation: (0..n).collect(),
            map: Array2::eye(d),
        }
    }

    /// A seeded random permutation and orthogonal map (rotation, or a
    /// reflection when `allow_reflection` and a coin flip says so).
    pub fn random(n: usize, d: usize, allow_reflection: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut permutation: Vec<usize> = (0..n).collect();
        permutation.shuffle(&mut rng);
        let mut map = linalg::random_rotation(d, &mut rng);
        if allow_reflection && rng.random_bool(0.5) {
            map.column_mut(0).mapv_inplace(|x| -x);
        }
        Self { permutation, map }
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn map(&self) -> &Array2<f64> {
        &self.map
    }
}

/// Settings for [`perturb`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub noise_sigma: f64,
    pub extra_vertex_count: usize,
    pub apply_random_rotation: bool,
    pub apply_random_reflection: bool,
    pub rng_seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.0,
            extra_vertex_count: 0,
            apply_random_rotation: false,
            apply_random_reflection: false,
            rng_seed: 0,
        }
    }
}

/// Centers the support at its unweighted mean and scales it into the unit
/// ball (max point norm becomes 1). Weights are untouched.
pub fn normalize(measure: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    let centroid = measure.centroid();
    let centered = &measure.support - &centroid.insert_axis(Axis(0));
    let radius = centered
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .fold(0.0, f64::max);
    let scale_floor = 1e-12 * (1.0 + measure.max_norm());
    if !(radius > scale_floor) {
        return Err(Error::DegenerateSupport);
    }
    Ok(DiscreteMeasure::from_parts_unchecked(
        centered / radius,
        measure.weights.clone(),
    ))
}

/// Row `i` of the result is row `σ(i)` of the input times `P`; weights are
/// permuted the same way.
pub fn apply_isometry(measure: &DiscreteMeasure, iso: &PermutedIsometry) -> Result<DiscreteMeasure> {
    let n = measure.len();
    if iso.permutation.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "permutation of length {} for {n} points",
            iso.permutation.len()
        )));
    }
    if iso.map.nrows() != measure.dim() {
        return Err(Error::DimensionMismatch(format!(
            "map of order {} for dimension {}",
            iso.map.nrows(),
            measure.dim()
        )));
    }
    let permuted = measure.support.select(Axis(0), &iso.permutation);
    let weights = measure.weights.select(Axis(0), &iso.permutation);
    Ok(DiscreteMeasure::from_parts_unchecked(permuted.dot(&iso.map), weights))
}

/// Synthetic perturbation: extra jittered vertices, seeded row permutation,
/// Gaussian noise, optional random rotation / reflection, then
/// re-normalization. The output always has uniform weights.
pub fn perturb(measure: &DiscreteMeasure, cfg: &PerturbationConfig) -> Result<DiscreteMeasure> {
    if !cfg.noise_sigma.is_finite() || cfg.noise_sigma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "noise_sigma must be finite and non-negative, got {}",
            cfg.noise_sigma
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let (n, d) = measure.support.dim();
    let total = n + cfg.extra_vertex_count;
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("sigma validated");

    let mut points = Array2::<f64>::zeros((total, d));
    points.slice_mut(ndarray::s![..n, ..]).assign(&measure.support);
    for row in n..total {
        let src = rng.random_range(0..n);
        for c in 0..d {
            points[[row, c]] = measure.support[[src, c]] + noise.sample(&mut rng);
        }
    }

    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);
    let mut shuffled = points.select(Axis(0), &order);
    if cfg.noise_sigma > 0.0 {
        shuffled.mapv_inplace(|x| x + noise.sample(&mut rng));
    }

    if cfg.apply_random_rotation || cfg.apply_random_reflection {
        let mut map = if cfg.apply_random_rotation {
            linalg::random_rotation(d, &mut rng)
        } else {
            Array2::eye(d)
        };
        if cfg.apply_random_reflection && rng.random_bool(0.5) {
            map.column_mut(0).mapv_inplace(|x| -x);
        }
        shuffled = shuffled.dot(&map);
    }
    normalize(&DiscreteMeasure::uniform(shuffled)?)
}
