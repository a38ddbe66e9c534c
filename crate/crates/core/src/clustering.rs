//! k-means over point clouds: farthest-point seeding under PW, nearest
//! centroid assignment under a chosen metric, barycenter (or medoid) updates,
//! and the ARI/NMI agreement scores.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barycenter::{solve_barycenter_warm, Alignment, BarycenterConfig, BarycenterProblem};
use crate::error::{Error, Result};
use crate::init::{gromov_wasserstein, intra_distances, GwConfig, GwMetric, InitStrategy};
use crate::kmeans::compress;
use crate::measure::DiscreteMeasure;
use crate::pw::{pw_distance, OrthogonalMap, PwSolution, PwStopRule};
use crate::transport::{solve_emd, CostMatrix, TransportPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterMetric {
    Pw,
    Emd,
    EucGw,
    GeoGw,
}

impl ClusterMetric {
    pub fn name(self) -> &'static str {
        match self {
            ClusterMetric::Pw => "pw",
            ClusterMetric::Emd => "emd",
            ClusterMetric::EucGw => "euc-gw",
            ClusterMetric::GeoGw => "geo-gw",
        }
    }

    /// Centroids of GW metrics are medoids (member clouds).
    pub fn uses_medoids(self) -> bool {
        matches!(self, ClusterMetric::EucGw | ClusterMetric::GeoGw)
    }
}

impl std::str::FromStr for ClusterMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            ClusterMetric::Pw,
            ClusterMetric::Emd,
            ClusterMetric::EucGw,
            ClusterMetric::GeoGw,
        ]
        .into_iter()
        .find(|m| m.name() == s.to_ascii_lowercase())
        .ok_or_else(|| Error::InvalidArgument(format!("unknown metric '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringConfig {
    pub k: usize,
    pub centroid_size: usize,
    pub metric: ClusterMetric,
    pub max_rounds: usize,
    pub rng_seed: u64,
    /// Initializer for PW evaluations (seeding and assignment).
    pub init: InitStrategy,
    pub stop: PwStopRule,
    /// Outer iterations of each barycenter update.
    pub barycenter_iters: usize,
}

impl ClusteringConfig {
    pub fn new(k: usize, metric: ClusterMetric) -> Self {
        Self {
            k,
            centroid_size: 50,
            metric,
            max_rounds: 20,
            rng_seed: 0,
            init: InitStrategy::fiedler_w(),
            stop: PwStopRule::default(),
            barycenter_iters: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClusteringResult {
    /// Cluster index per cloud, in `0..k`.
    pub labels: Vec<usize>,
    pub centroids: Vec<DiscreteMeasure>,
    /// Sum of squared distances to the assigned centroid, per round.
    pub distortion_trace: Vec<f64>,
    pub rounds: usize,
    pub converged: bool,
}

/// Distance evaluation between a centroid (rows) and a cloud (columns).
struct Evaluation {
    cost: f64,
    plan: Option<TransportPlan>,
}

fn squared_distance(
    centroid: &DiscreteMeasure,
    cloud: &DiscreteMeasure,
    metric: ClusterMetric,
    cfg: &ClusteringConfig,
) -> Result<Evaluation> {
    match metric {
        ClusterMetric::Pw => {
            let s = robust_pw(centroid, cloud, cfg)?;
            Ok(Evaluation {
                cost: s.cost,
                plan: Some(s.plan),
            })
        }
        ClusterMetric::Emd => {
            let cost = CostMatrix::squared_euclidean(centroid.support(), cloud.support())?;
            let s = solve_emd(&cost, centroid.weights(), cloud.weights())?;
            Ok(Evaluation {
                cost: s.cost.max(0.0),
                plan: Some(s.plan),
            })
        }
        ClusterMetric::EucGw | ClusterMetric::GeoGw => {
            let gm = if metric == ClusterMetric::EucGw {
                GwMetric::Euclidean
            } else {
                GwMetric::Geodesic
            };
            let c1 = intra_distances(centroid, gm, cfg.init.knn_k)?;
            let c2 = intra_distances(cloud, gm, cfg.init.knn_k)?;
            let gw = GwConfig {
                max_iters: cfg.init.gw_iters,
                ..GwConfig::default()
            };
            let s = gromov_wasserstein(&c1, &c2, centroid.weights(), cloud.weights(), &gw)?;
            Ok(Evaluation {
                cost: s.cost,
                plan: None,
            })
        }
    }
}

/// PW under the configured initializer, retried from the Wasserstein plan
/// when that initializer is undefined for the pair (repeated eigenvalues,
/// disconnected graph).
fn robust_pw(a: &DiscreteMeasure, b: &DiscreteMeasure, cfg: &ClusteringConfig) -> Result<PwSolution> {
    match pw_distance(a, b, &cfg.init, &cfg.stop) {
        Err(e @ (Error::EigenMultiplicity(..) | Error::DegenerateCovariance | Error::Disconnected)) => {
            log::warn!("{e}; falling back to the Wasserstein initialization");
            pw_distance(a, b, &InitStrategy::wasserstein().with_knn_k(cfg.init.knn_k), &cfg.stop)
        }
        other => other,
    }
}

fn validate(clouds: &[DiscreteMeasure], cfg: &ClusteringConfig) -> Result<()> {
    if cfg.k == 0 || cfg.k > clouds.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {} for {} clouds",
            cfg.k,
            clouds.len()
        )));
    }
    if cfg.centroid_size == 0 {
        return Err(Error::InvalidArgument("centroid size must be at least 1".into()));
    }
    let d = clouds[0].dim();
    if clouds.iter().any(|c| c.dim() != d) {
        return Err(Error::DimensionMismatch("clouds live in different dimensions".into()));
    }
    cfg.stop.validate()
}

/// Farthest-point seeding under PW. Returns the indices of the selected
/// clouds and their compressions to `centroid_size` points.
pub fn seed_centroids(
    clouds: &[DiscreteMeasure],
    cfg: &ClusteringConfig,
) -> Result<(Vec<usize>, Vec<DiscreteMeasure>)> {
    validate(clouds, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let n = clouds.len();
    let first = rng.random_range(0..n);
    let mut selected = vec![first];
    let mut nearest = vec![f64::INFINITY; n];
    while selected.len() < cfg.k {
        let last = *selected.last().expect("non-empty");
        let fresh: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                if selected.contains(&i) {
                    Ok(0.0)
                } else {
                    Ok(robust_pw(&clouds[last], &clouds[i], cfg)?.cost)
                }
            })
            .collect::<Result<_>>()?;
        for i in 0..n {
            nearest[i] = nearest[i].min(fresh[i]);
        }
        let next = (0..n)
            .filter(|i| !selected.contains(i))
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if nearest[b] >= nearest[i] => Some(b),
                _ => Some(i),
            })
            .expect("k <= n leaves a candidate");
        selected.push(next);
    }
    let centroids = selected
        .iter()
        .enumerate()
        .map(|(c, &i)| {
            compress(
                &clouds[i],
                cfg.centroid_size.min(clouds[i].len()).max(1),
                cfg.rng_seed.wrapping_add(c as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((selected, centroids))
}

/// Lloyd-style k-means over clouds.
pub fn pw_kmeans(clouds: &[DiscreteMeasure], cfg: &ClusteringConfig) -> Result<ClusteringResult> {
    validate(clouds, cfg)?;
    let (_, mut centroids) = seed_centroids(clouds, cfg)?;
    let n = clouds.len();
    let k = cfg.k;
    // (cloud, cluster) → alignment of the current centroid to that member,
    // produced by the last barycenter update
    let mut cached: HashMap<(usize, usize), PwSolution> = HashMap::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut rounds = 0;

    for round in 1..=cfg.max_rounds {
        rounds = round;
        let evals: Vec<Vec<Evaluation>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..k)
                    .map(|c| {
                        let mut e = squared_distance(&centroids[c], &clouds[i], cfg.metric, cfg)?;
                        if let Some(sol) = cached.get(&(i, c)) {
                            if sol.cost < e.cost {
                                e = Evaluation {
                                    cost: sol.cost,
                                    plan: Some(sol.plan.clone()),
                                };
                            }
                        }
                        Ok(e)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let new_labels: Vec<usize> = evals
            .iter()
            .map(|row| (0..k).fold(0, |b, c| if row[c].cost < row[b].cost { c } else { b }))
            .collect();
        let distortion: f64 = evals.iter().zip(&new_labels).map(|(row, &c)| row[c].cost).sum();
        trace.push(distortion);
        log::debug!("clustering round {round}: distortion {distortion:e}");
        let stable = new_labels == labels;
        labels = new_labels;
        if stable {
            converged = true;
            break;
        }
        if round == cfg.max_rounds {
            break;
        }

        cached.clear();
        for c in 0..k {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            if members.is_empty() {
                // reseed from the cloud farthest from its centroid
                let far = (0..n).fold(0, |b, i| {
                    if evals[i][labels[i]].cost > evals[b][labels[b]].cost {
                        i
                    } else {
                        b
                    }
                });
                let size = cfg.centroid_size.min(clouds[far].len()).max(1);
                centroids[c] = compress(&clouds[far], size, cfg.rng_seed.wrapping_add((round * k + c) as u64))?;
                continue;
            }
            if cfg.metric.uses_medoids() {
                centroids[c] = medoid(clouds, &members, cfg)?;
                continue;
            }
            let problem =
                BarycenterProblem::new(members.iter().map(|&i| clouds[i].clone()).collect(), centroids[c].len())
                    .with_init_support(centroids[c].support().to_owned())
                    .with_fixed_weights(centroids[c].weights().to_owned())
                    .with_seed(cfg.rng_seed);
            let bcfg = BarycenterConfig {
                init: cfg.init.clone(),
                stop: PwStopRule {
                    max_iters: cfg.barycenter_iters,
                    ..cfg.stop
                },
                inner_stop: cfg.stop,
                alignment: if cfg.metric == ClusterMetric::Emd {
                    Alignment::Identity
                } else {
                    Alignment::Procrustes
                },
                ..BarycenterConfig::default()
            };
            let warm = members
                .iter()
                .map(|&i| evals[i][c].plan.clone().expect("transport metrics keep plans"))
                .collect();
            let state = solve_barycenter_warm(&problem, &bcfg, warm)?;
            if cfg.metric == ClusterMetric::Pw {
                for (&i, sol) in members.iter().zip(&state.per_input) {
                    cached.insert((i, c), sol.clone());
                }
            }
            centroids[c] = state.measure()?;
        }
    }
    Ok(ClusteringResult {
        labels,
        centroids,
        distortion_trace: trace,
        rounds,
        converged,
    })
}

fn medoid(clouds: &[DiscreteMeasure], members: &[usize], cfg: &ClusteringConfig) -> Result<DiscreteMeasure> {
    let totals: Vec<f64> = members
        .par_iter()
        .map(|&a| {
            members
                .iter()
                .filter(|&&b| b != a)
                .map(|&b| Ok(squared_distance(&clouds[a], &clouds[b], cfg.metric, cfg)?.cost))
                .sum::<Result<f64>>()
        })
        .collect::<Result<_>>()?;
    let best = (0..members.len()).fold(0, |b, i| if totals[i] < totals[b] { i } else { b });
    Ok(clouds[members[best]].clone())
}

/// Applies `map` to every cloud (used by rotation-robustness checks).
pub fn rotate_all(clouds: &[DiscreteMeasure], map: &OrthogonalMap) -> Result<Vec<DiscreteMeasure>> {
    clouds.iter().map(|c| c.transformed(map.matrix())).collect()
}

/// Joint counts with row and column totals.
type Contingency = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>);

fn contingency(a: &[usize], b: &[usize]) -> Result<Contingency> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "labelings of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let index = |labels: &[usize]| {
        let mut ids: Vec<usize> = labels.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let map: HashMap<usize, usize> = ids.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        (ids.len(), map)
    };
    let (ka, ma) = index(a);
    let (kb, mb) = index(b);
    let mut table = vec![vec![0.0; kb]; ka];
    for (x, y) in a.iter().zip(b) {
        table[ma[x]][mb[y]] += 1.0;
    }
    let rows = table.iter().map(|r| r.iter().sum()).collect();
    let cols = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    Ok((table, rows, cols))
}

fn choose2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    let (table, rows, cols) = contingency(a, b)?;
    let n = a.len() as f64;
    let index: f64 = table.iter().flatten().map(|&x| choose2(x)).sum();
    let sa: f64 = rows.iter().map(|&x| choose2(x)).sum();
    let sb: f64 = cols.iter().map(|&x| choose2(x)).sum();
    let expected = sa * sb / choose2(n).max(f64::MIN_POSITIVE);
    let max = 0.5 * (sa + sb);
    if (max - expected).abs() < 1e-15 {
        // both partitions trivial in the same way
        return Ok(if index == max { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Mutual information over the arithmetic mean of the two entropies
/// (natural log). A constant labeling has zero entropy; the score is then 0.
pub fn normalized_mutual_info(a: &[usize], b: &[usize]) -> Result<f64> {
    let (table, rows, cols) = contingency(a, b)?;
    let n = a.len() as f64;
    let entropy = |counts: &[f64]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| -(c / n) * (c / n).ln())
            .sum()
    };
    let (ha, hb) = (entropy(&rows), entropy(&cols));
    if ha == 0.0 || hb == 0.0 {
        log::warn!("normalized mutual information of a constant labeling is undefined; reporting 0");
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0.0 {
                mi += nij / n * (n * nij / (rows[i] * cols[j])).ln();
            }
        }
    }
    Ok((mi / (0.5 * (ha + hb))).clamp(0.0, 1.0))
}

/// Confusion counts with true classes as rows and predicted clusters as
/// columns, both in order of first appearance after sorting.
pub fn confusion_matrix(truth: &[usize], predicted: &[usize]) -> Result<Vec<Vec<usize>>> {
    let (table, _, _) = contingency(truth, predicted)?;
    Ok(table
        .into_iter()
        .map(|r| r.into_iter().map(|x| x as usize).collect())
        .collect())
}

/// Mean of the member clouds' squared distances, a convenience for reports.
pub fn mean_distortion(result: &ClusteringResult) -> f64 {
    let n = result.labels.len().max(1) as f64;
    result.distortion_trace.last().copied().unwrap_or(0.0) / n
}
