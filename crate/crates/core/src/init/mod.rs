//! Initial couplings for the alternating PW solver.

pub mod graph;
pub mod gw;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::measure::DiscreteMeasure;
use crate::transport::{emd_1d, solve_emd, CostMatrix, TransportPlan};

pub use graph::{
    build_knn_graph, connected_knn_graph, fiedler_pair, fiedler_vector, geodesic_distances, FiedlerPair, NeighborGraph,
};
pub use gw::{gromov_wasserstein, gw_objective, pairwise_distances, GwConfig, GwSolution};

const COVARIANCE_GAP: f64 = 1e-9;

/// Named initializers (the `Provided` plan is carried by [`InitStrategy`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    EucGw,
    GeoGw,
    FiedlerW,
    UpcaW,
    /// Plain optimal transport plan under the identity map.
    Wasserstein,
}

impl InitKind {
    pub const ALL: [InitKind; 5] = [
        InitKind::EucGw,
        InitKind::GeoGw,
        InitKind::FiedlerW,
        InitKind::UpcaW,
        InitKind::Wasserstein,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InitKind::EucGw => "euc-gw",
            InitKind::GeoGw => "geo-gw",
            InitKind::FiedlerW => "fiedler-w",
            InitKind::UpcaW => "upca-w",
            InitKind::Wasserstein => "wasserstein",
        }
    }
}

impl std::str::FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        let s = match s.as_str() {
            "fiedler" => "fiedler-w",
            "upca" => "upca-w",
            other => other,
        };
        InitKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown initialization '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitSource {
    Kind(InitKind),
    Provided(TransportPlan),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitStrategy {
    pub source: InitSource,
    pub knn_k: usize,
    pub gw_iters: usize,
}

impl InitStrategy {
    pub fn new(kind: InitKind) -> Self {
        Self {
            source: InitSource::Kind(kind),
            knn_k: 10,
            gw_iters: 200,
        }
    }

    pub fn euc_gw() -> Self {
        Self::new(InitKind::EucGw)
    }

    pub fn geo_gw() -> Self {
        Self::new(InitKind::GeoGw)
    }

    pub fn fiedler_w() -> Self {
        Self::new(InitKind::FiedlerW)
    }

    pub fn upca_w() -> Self {
        Self::new(InitKind::UpcaW)
    }

    pub fn wasserstein() -> Self {
        Self::new(InitKind::Wasserstein)
    }

    pub fn provided(plan: TransportPlan) -> Self {
        Self {
            source: InitSource::Provided(plan),
            ..Self::wasserstein()
        }
    }

    pub fn with_knn_k(mut self, k: usize) -> Self {
        self.knn_k = k;
        self
    }

    pub fn with_gw_iters(mut self, iters: usize) -> Self {
        self.gw_iters = iters;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.knn_k == 0 {
            return Err(Error::InvalidArgument("knn_k must be at least 1".into()));
        }
        if self.gw_iters == 0 {
            return Err(Error::InvalidArgument("gw_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GwMetric {
    Euclidean,
    Geodesic,
}

/// Builds `Γ₀` for the given strategy.
pub fn initial_plan(a: &DiscreteMeasure, b: &DiscreteMeasure, init: &InitStrategy) -> Result<TransportPlan> {
    init.validate()?;
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    match &init.source {
        InitSource::Provided(plan) => {
            if plan.dim() != (a.len(), b.len()) {
                return Err(Error::DimensionMismatch(format!(
                    "provided plan is {:?}, measures have {} and {} points",
                    plan.dim(),
                    a.len(),
                    b.len()
                )));
            }
            TransportPlan::new(plan.coupling().clone(), a.weights(), b.weights())
        }
        InitSource::Kind(InitKind::EucGw) => init_gw(a, b, GwMetric::Euclidean, init.gw_iters, init.knn_k),
        InitSource::Kind(InitKind::GeoGw) => init_gw(a, b, GwMetric::Geodesic, init.gw_iters, init.knn_k),
        InitSource::Kind(InitKind::FiedlerW) => init_fiedler_w(a, b, init.knn_k),
        InitSource::Kind(InitKind::UpcaW) => init_upca_w(a, b),
        InitSource::Kind(InitKind::Wasserstein) => {
            let cost = CostMatrix::squared_euclidean(a.support(), b.support())?;
            Ok(solve_emd(&cost, a.weights(), b.weights())?.plan)
        }
    }
}

/// Matches standardized Fiedler vectors in 1-D, trying both orientations of
/// the second vector.
pub fn init_fiedler_w(a: &DiscreteMeasure, b: &DiscreteMeasure, k: usize) -> Result<TransportPlan> {
    let (f1, f2) = fiedler_pair_of(a, b, k)?;
    let (plan_pos, cost_pos) = emd_1d(f1.view(), a.weights(), f2.view(), b.weights())?;
    let flipped = f2.mapv(|x| -x);
    let (plan_neg, cost_neg) = emd_1d(f1.view(), a.weights(), flipped.view(), b.weights())?;
    Ok(if cost_neg < cost_pos { plan_neg } else { plan_pos })
}

fn fiedler_pair_of(a: &DiscreteMeasure, b: &DiscreteMeasure, k: usize) -> Result<(Array1<f64>, Array1<f64>)> {
    let f1 = fiedler_vector(&connected_knn_graph(a, k)?)?;
    let f2 = fiedler_vector(&connected_knn_graph(b, k)?)?;
    Ok((f1, f2))
}

/// Eigenvectors of the unweighted covariance, columns sorted by descending
/// eigenvalue.
pub fn principal_axes(measure: &DiscreteMeasure) -> Result<Array2<f64>> {
    let x = measure.support();
    let n = x.nrows() as f64;
    let centered = &x - &measure.centroid().insert_axis(ndarray::Axis(0));
    let cov = centered.t().dot(&centered) / n;
    let (values, vectors) = linalg::symmetric_eigen(&cov);
    let d = values.len();
    for i in 1..d {
        if (values[i] - values[i - 1]).abs() < COVARIANCE_GAP {
            return Err(Error::DegenerateCovariance);
        }
    }
    Ok(Array2::from_shape_fn((d, d), |(r, c)| vectors[[r, d - 1 - c]]))
}

/// Candidate plans of the 2^d sign choices, with their transport costs.
pub fn upca_candidates(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<Vec<(TransportPlan, f64)>> {
    let qx = principal_axes(a)?;
    let qy = principal_axes(b)?;
    let d = a.dim();
    if d >= usize::BITS as usize - 1 || d > 16 {
        return Err(Error::TooLarge(format!("2^{d} sign combinations")));
    }
    let base = b.support().dot(&qy);
    (0..(1usize << d))
        .map(|mask| {
            let signs = Array1::from_shape_fn(d, |i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 });
            let aligned = (&base * &signs.view().insert_axis(ndarray::Axis(0))).dot(&qx.t());
            let cost = CostMatrix::squared_euclidean(a.support(), aligned.view())?;
            let s = solve_emd(&cost, a.weights(), b.weights())?;
            Ok((s.plan, s.cost))
        })
        .collect()
}

/// Aligns principal axes under every sign choice and keeps the cheapest
/// transport plan (lowest index on ties).
pub fn init_upca_w(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<TransportPlan> {
    let candidates = upca_candidates(a, b)?;
    let mut best = 0;
    for (i, (_, cost)) in candidates.iter().enumerate() {
        if *cost < candidates[best].1 {
            best = i;
        }
    }
    Ok(candidates.into_iter().nth(best).expect("at least one candidate").0)
}

/// Intra-cloud distance matrix for a GW metric.
pub fn intra_distances(measure: &DiscreteMeasure, metric: GwMetric, knn_k: usize) -> Result<Array2<f64>> {
    match metric {
        GwMetric::Euclidean => Ok(pairwise_distances(measure.support())),
        GwMetric::Geodesic => geodesic_distances(&connected_knn_graph(measure, knn_k)?),
    }
}

/// Gromov-Wasserstein plan between intra-cloud distances.
pub fn init_gw(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    metric: GwMetric,
    iters: usize,
    knn_k: usize,
) -> Result<TransportPlan> {
    let c1 = intra_distances(a, metric, knn_k)?;
    let c2 = intra_distances(b, metric, knn_k)?;
    let cfg = GwConfig {
        max_iters: iters,
        ..GwConfig::default()
    };
    Ok(gromov_wasserstein(&c1, &c2, a.weights(), b.weights(), &cfg)?.plan)
}
