//! Initializer benchmark: align a pivot cloud to perturbed copies of itself
//! under each initializer and record which runs reach the noise floor.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{InitKind, InitStrategy};
use crate::measure::{perturb, DiscreteMeasure, PerturbationConfig};
use crate::pw::{pw_distance, PwStopRule};

/// Initializers compared by default.
pub const BENCH_INITS: [InitKind; 4] = [InitKind::EucGw, InitKind::GeoGw, InitKind::FiedlerW, InitKind::UpcaW];

/// Expected squared cost of matching a cloud to a noisy copy, with margin:
/// `4·d·σ² + 1e-6`.
pub fn default_threshold(dim: usize, noise_sigma: f64) -> f64 {
    4.0 * dim as f64 * noise_sigma * noise_sigma + 1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub trials: usize,
    pub noise_sigma: f64,
    pub extra_vertices: usize,
    pub random_rotation: bool,
    pub random_reflection: bool,
    pub seed: u64,
    /// Defaults to [`default_threshold`] when absent.
    pub success_threshold: Option<f64>,
    pub inits: Vec<InitKind>,
    pub knn_k: usize,
    pub stop: BenchStop,
}

/// Serializable copy of [`PwStopRule`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchStop {
    pub rel_tol: f64,
    pub max_iters: usize,
}

impl From<BenchStop> for PwStopRule {
    fn from(s: BenchStop) -> Self {
        PwStopRule {
            rel_tol: s.rel_tol,
            max_iters: s.max_iters,
        }
    }
}

impl Default for BenchConfig {
    fn default() -> Self {
        let stop = PwStopRule::default();
        Self {
            trials: 50,
            noise_sigma: 0.01,
            extra_vertices: 5,
            random_rotation: true,
            random_reflection: true,
            seed: 0,
            success_threshold: None,
            inits: BENCH_INITS.to_vec(),
            knn_k: 10,
            stop: BenchStop {
                rel_tol: stop.rel_tol,
                max_iters: stop.max_iters,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub init: InitKind,
    /// 1-based trial index.
    pub trial: usize,
    pub success: bool,
    pub cost: Option<f64>,
    pub iterations: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceGrid {
    pub rows: Vec<InitKind>,
    pub trials: usize,
    pub threshold: f64,
    /// Row-major: all trials of `rows[0]`, then `rows[1]`, ...
    pub cells: Vec<GridCell>,
}

impl ConvergenceGrid {
    pub fn row(&self, init: InitKind) -> &[GridCell] {
        let r = self
            .rows
            .iter()
            .position(|&k| k == init)
            .expect("initializer not in grid");
        &self.cells[r * self.trials..(r + 1) * self.trials]
    }

    pub fn success_rate(&self, init: InitKind) -> f64 {
        let row = self.row(init);
        row.iter().filter(|c| c.success).count() as f64 / row.len().max(1) as f64
    }

    /// `init,trial,success,cost,iterations,error`, one line per cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("init,trial,success,cost,iterations,error\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.init.name(),
                c.trial,
                u8::from(c.success),
                c.cost.map_or(String::new(), |v| format!("{v:e}")),
                c.iterations.map_or(String::new(), |v| v.to_string()),
                c.error.as_deref().unwrap_or("").replace(',', ";"),
            ));
        }
        out
    }
}

/// Runs every trial under every initializer. Failures of a single run are
/// recorded in its cell.
pub fn run_convergence_grid(pivot: &DiscreteMeasure, cfg: &BenchConfig) -> Result<ConvergenceGrid> {
    if cfg.trials == 0 || cfg.inits.is_empty() {
        return Err(Error::InvalidArgument(
            "the grid needs at least one trial and one initializer".into(),
        ));
    }
    let threshold = cfg
        .success_threshold
        .unwrap_or_else(|| default_threshold(pivot.dim(), cfg.noise_sigma));
    let stop: PwStopRule = cfg.stop.into();
    stop.validate()?;
    let copies: Vec<Result<DiscreteMeasure>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            perturb(
                pivot,
                &PerturbationConfig {
                    noise_sigma: cfg.noise_sigma,
                    extra_vertex_count: cfg.extra_vertices,
                    apply_random_rotation: cfg.random_rotation,
                    apply_random_reflection: cfg.random_reflection,
                    rng_seed: cfg.seed.wrapping_add(t as u64),
                },
            )
        })
        .collect();
    let jobs: Vec<(InitKind, usize)> = cfg
        .inits
        .iter()
        .flat_map(|&k| (0..cfg.trials).map(move |t| (k, t)))
        .collect();
    let cells = jobs
        .into_par_iter()
        .map(|(kind, t)| {
            let outcome = copies[t].clone().and_then(|copy| {
                let init = InitStrategy::new(kind).with_knn_k(cfg.knn_k);
                pw_distance(pivot, &copy, &init, &stop)
            });
            match outcome {
                Ok(sol) => GridCell {
                    init: kind,
                    trial: t + 1,
                    success: sol.cost <= threshold,
                    cost: Some(sol.cost),
                    iterations: Some(sol.iterations),
                    error: None,
                },
                Err(e) => GridCell {
                    init: kind,
                    trial: t + 1,
                    success: false,
                    cost: None,
                    iterations: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(ConvergenceGrid {
        rows: cfg.inits.clone(),
        trials: cfg.trials,
        threshold,
        cells,
    })
}
