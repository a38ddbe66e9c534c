//! Procedural test shapes: a 2-D dog silhouette, a 3-D curved tube, and
//! labeled synthetic datasets for clustering.

use std::f64::consts::{PI, TAU};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::linalg::{random_rotation, rotation_2d};
use crate::measure::{normalize, DiscreteMeasure};

pub type Stroke = Vec<[f64; 2]>;

fn stroke_length(s: &[[f64; 2]]) -> f64 {
    s.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum()
}

/// Point at arc-length fraction `t ∈ [0,1]` along the concatenation of
/// `strokes` (jumps between strokes are not counted).
fn point_at(strokes: &[Stroke], total: f64, t: f64) -> [f64; 2] {
    let mut remaining = t * total;
    for s in strokes {
        for w in s.windows(2) {
            let len = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            if remaining <= len && len > 0.0 {
                let f = remaining / len;
                return [w[0][0] + f * (w[1][0] - w[0][0]), w[0][1] + f * (w[1][1] - w[0][1])];
            }
            remaining -= len;
        }
    }
    *strokes.last().and_then(|s| s.last()).expect("non-empty strokes")
}

/// `n` points along `strokes`, evenly spaced in arc length when `rng` is
/// `None`, one uniform draw per equal-length slot otherwise.
fn sample_strokes(strokes: &[Stroke], n: usize, rng: Option<&mut ChaCha8Rng>) -> Array2<f64> {
    let total: f64 = strokes.iter().map(|s| stroke_length(s)).sum();
    let ts: Vec<f64> = match rng {
        None => (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect(),
        Some(r) => (0..n).map(|i| (i as f64 + r.random::<f64>()) / n as f64).collect(),
    };
    let mut pts = Array2::zeros((n, 2));
    for (i, t) in ts.into_iter().enumerate() {
        let p = point_at(strokes, total, t);
        pts[[i, 0]] = p[0];
        pts[[i, 1]] = p[1];
    }
    pts
}

fn add_noise(pts: &mut Array2<f64>, sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).expect("finite sigma");
        pts.mapv_inplace(|x| x + noise.sample(rng));
    }
}

fn dog_strokes() -> Vec<Stroke> {
    vec![
        // tail, spine, neck, snout
        vec![
            [-2.4, 1.2],
            [-2.0, 0.6],
            [-1.6, 0.2],
            [0.0, 0.3],
            [1.6, 0.3],
            [2.1, 1.1],
            [2.9, 0.9],
        ],
        // ear
        vec![[2.1, 1.1], [2.0, 1.6]],
        // legs
        vec![[-1.6, 0.2], [-2.0, -1.2]],
        vec![[-1.0, 0.23], [-0.9, -1.2]],
        vec![[1.0, 0.3], [0.9, -1.2]],
        vec![[1.6, 0.3], [2.0, -1.2]],
    ]
}

/// 2-D dog silhouette sampled at `n` points, with a small fixed jitter so
/// that no two points have identical neighborhoods. Normalized.
pub fn dog_2d(n: usize) -> Result<DiscreteMeasure> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xd06);
    let mut pts = sample_strokes(&dog_strokes(), n, None);
    add_noise(&mut pts, 0.01, &mut rng);
    normalize(&DiscreteMeasure::uniform(pts)?)
}

/// A tube around three quarters of a circle whose cross-section radius grows
/// from one end to the other and whose center line rises slightly;
/// `along × around` jittered points, normalized.
pub fn torus_tube_3d(along: usize, around: usize) -> Result<DiscreteMeasure> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x70f);
    let mut pts = Array2::zeros((along * around, 3));
    for i in 0..along {
        let s = i as f64 / (along - 1).max(1) as f64;
        let theta = 1.5 * PI * s;
        let radius = 0.12 + 0.18 * s;
        let center = [theta.cos(), theta.sin(), 0.3 * s];
        for j in 0..around {
            let phi = TAU * (j as f64 + 0.5 * (i % 2) as f64) / around as f64;
            let row = i * around + j;
            // radial direction in the plane, then vertical
            pts[[row, 0]] = center[0] + radius * phi.cos() * theta.cos();
            pts[[row, 1]] = center[1] + radius * phi.cos() * theta.sin();
            pts[[row, 2]] = center[2] + radius * phi.sin();
        }
    }
    add_noise(&mut pts, 0.01, &mut rng);
    normalize(&DiscreteMeasure::uniform(pts)?)
}

/// Sample size of the bundled dog.
pub const DOG_POINTS: usize = 300;
/// Rings and points per ring of the bundled tube.
pub const TUBE_GRID: (usize, usize) = (40, 10);

pub fn bundled_dog() -> Result<DiscreteMeasure> {
    dog_2d(DOG_POINTS)
}

pub fn bundled_tube() -> Result<DiscreteMeasure> {
    torus_tube_3d(TUBE_GRID.0, TUBE_GRID.1)
}

/// Stroke templates of the synthetic digit-like classes, all clearly
/// distinct up to rotation and reflection.
pub fn class_templates() -> Vec<Vec<Stroke>> {
    let ellipse: Stroke = (0..=48)
        .map(|i| {
            let t = TAU * i as f64 / 48.0;
            [0.6 * t.cos(), t.sin()]
        })
        .collect();
    let wave: Stroke = (0..=40)
        .map(|i| {
            let t = i as f64 / 40.0;
            [0.5 * (TAU * t).sin(), 2.0 * t - 1.0]
        })
        .collect();
    vec![
        vec![ellipse],
        vec![vec![[0.0, -1.0], [0.0, 1.0]]],
        vec![vec![[0.0, 1.0], [0.0, -1.0], [0.9, -1.0]]],
        vec![vec![[-0.9, 1.0], [0.9, 1.0]], vec![[0.0, 1.0], [0.0, -1.0]]],
        vec![wave],
    ]
}

/// Within-class variation of the synthetic datasets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub per_class: usize,
    /// Point counts are drawn uniformly from this inclusive range.
    pub points: (usize, usize),
    pub noise_sigma: f64,
    /// Maximum tilt in radians, drawn uniformly in `[−tilt, tilt]`.
    pub max_tilt: f64,
    /// Axis stretch factors are drawn uniformly in `[1 − s, 1 + s]`.
    pub stretch: f64,
    /// Apply a uniformly random rotation to every cloud.
    pub random_rotation: bool,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            per_class: 10,
            points: (40, 60),
            noise_sigma: 0.02,
            max_tilt: PI / 4.0,
            stretch: 0.1,
            random_rotation: false,
            seed: 0,
        }
    }
}

fn instance(strokes: &[Stroke], cfg: &DatasetConfig, rng: &mut ChaCha8Rng) -> Result<DiscreteMeasure> {
    let n = rng.random_range(cfg.points.0..=cfg.points.1);
    let mut pts = sample_strokes(strokes, n, Some(rng));
    let sx = 1.0 + cfg.stretch * (2.0 * rng.random::<f64>() - 1.0);
    let sy = 1.0 + cfg.stretch * (2.0 * rng.random::<f64>() - 1.0);
    pts.column_mut(0).mapv_inplace(|x| x * sx);
    pts.column_mut(1).mapv_inplace(|y| y * sy);
    let tilt = cfg.max_tilt * (2.0 * rng.random::<f64>() - 1.0);
    let mut pts = pts.dot(&rotation_2d(tilt));
    add_noise(&mut pts, cfg.noise_sigma, rng);
    if cfg.random_rotation {
        pts = pts.dot(&random_rotation(2, rng));
    }
    normalize(&DiscreteMeasure::uniform(pts)?)
}

/// Clouds of the given templates, `per_class` each, grouped by class;
/// returns the clouds and their 0-based class labels.
pub fn dataset_from(templates: &[Vec<Stroke>], cfg: &DatasetConfig) -> Result<(Vec<DiscreteMeasure>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut clouds = Vec::new();
    let mut labels = Vec::new();
    for (c, strokes) in templates.iter().enumerate() {
        for _ in 0..cfg.per_class {
            clouds.push(instance(strokes, cfg, &mut rng)?);
            labels.push(c);
        }
    }
    Ok((clouds, labels))
}

/// The five-class synthetic dataset.
pub fn synthetic_classes(cfg: &DatasetConfig) -> Result<(Vec<DiscreteMeasure>, Vec<usize>)> {
    dataset_from(&class_templates(), cfg)
}

/// Circles against 2:1 rectangle outlines, each cloud randomly rotated.
pub fn circles_and_rectangles(per_class: usize, seed: u64) -> Result<(Vec<DiscreteMeasure>, Vec<usize>)> {
    let circle: Stroke = (0..=64)
        .map(|i| {
            let t = TAU * i as f64 / 64.0;
            [t.cos(), t.sin()]
        })
        .collect();
    let rectangle: Stroke = vec![[-1.0, -0.5], [1.0, -0.5], [1.0, 0.5], [-1.0, 0.5], [-1.0, -0.5]];
    let cfg = DatasetConfig {
        per_class,
        points: (30, 40),
        noise_sigma: 0.01,
        max_tilt: 0.0,
        stretch: 0.05,
        random_rotation: true,
        seed,
    };
    dataset_from(&[vec![circle], vec![rectangle]], &cfg)
}
