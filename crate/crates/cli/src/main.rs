//! `pw`: Procrustes-Wasserstein alignment, barycenters, interpolation,
//! clustering and initializer benchmarks on point-cloud files.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "pw", version, about = "Procrustes-Wasserstein tools for point clouds")]
pub struct Cli {
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true, env = "PW_JOBS")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// PW distance between two clouds.
    Distance(PairArgs),
    /// Align the second cloud onto the first and write the result.
    Align(PairArgs),
    /// Free-support barycenter of one or more clouds.
    Barycenter(BarycenterArgs),
    /// Barycenters of two clouds along a sweep of weights (1 − η, η).
    Interpolate(InterpolateArgs),
    /// k-means over a directory of clouds with one subdirectory per class.
    Cluster(ClusterArgs),
    /// Success rates of the initializers on perturbed copies of a pivot.
    BenchInit(BenchArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReadArgs {
    /// Input format (xyz, csv, ply, pgm); inferred from the extension if absent.
    #[arg(long)]
    pub format: Option<String>,
    /// Gray level at or above which a PGM pixel becomes a point.
    #[arg(long, default_value_t = 128)]
    pub threshold: u16,
    /// Keep coordinates as read instead of centering and scaling into the unit ball.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolverArgs {
    /// Initialization: euc-gw, geo-gw, fiedler, upca, wasserstein, or provided:FILE
    /// (a plan matrix with one row per point of the first cloud).
    #[arg(long, default_value = "fiedler")]
    pub init: String,
    /// Neighbors in the kNN graph (Fiedler and geodesic GW initializations).
    #[arg(long, default_value_t = 10)]
    pub knn_k: usize,
    /// Relative objective decrease below which the alternation stops.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WriteArgs {
    /// Output directory.
    #[arg(long, default_value = "pw-out")]
    pub out: PathBuf,
    /// Format of written clouds (xyz, csv, ply).
    #[arg(long, default_value = "xyz")]
    pub out_format: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PairArgs {
    pub first: PathBuf,
    pub second: PathBuf,
    /// Recorded in the manifest; alignment itself draws no random numbers.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub read: ReadArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub write: WriteArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BarycenterArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Comma-separated input weights; uniform if absent.
    #[arg(long)]
    pub lambdas: Option<String>,
    /// Barycenter support size; defaults to the size of the first input.
    #[arg(long)]
    pub size: Option<usize>,
    /// Entropic regularization; 0 selects exact transport.
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    /// Also optimize the barycenter weights (exact transport only).
    #[arg(long)]
    pub optimize_weights: bool,
    /// Seed of every random choice.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub read: ReadArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub write: WriteArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InterpolateArgs {
    pub first: PathBuf,
    pub second: PathBuf,
    /// Comma-separated η values in ascending order.
    #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
    pub etas: String,
    /// Support size of every intermediate cloud; defaults to the first input's.
    #[arg(long)]
    pub size: Option<usize>,
    /// Entropic regularization; 0 selects exact transport.
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    /// Seed of every random choice.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub read: ReadArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub write: WriteArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ClusterArgs {
    /// Directory with one subdirectory of clouds or images per class.
    pub dataset: PathBuf,
    /// Number of clusters; defaults to the number of classes.
    #[arg(long)]
    pub k: Option<usize>,
    /// Distance: pw, emd, euc-gw or geo-gw.
    #[arg(long, default_value = "pw")]
    pub metric: String,
    #[arg(long, default_value_t = 50)]
    pub centroid_size: usize,
    #[arg(long, default_value_t = 20)]
    pub max_rounds: usize,
    /// Seed of every random choice.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub read: ReadArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub write: WriteArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    /// Pivot cloud; use --shape for a bundled one instead.
    pub pivot: Option<PathBuf>,
    /// Bundled pivot: dog (2-D) or tube (3-D).
    #[arg(long, conflicts_with = "pivot")]
    pub shape: Option<String>,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    /// Standard deviation of the Gaussian noise added to each copy.
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 5)]
    pub extra_vertices: usize,
    /// Success when the final cost is at most this; defaults to 4·d·noise² + 1e-6.
    #[arg(long)]
    pub success_threshold: Option<f64>,
    /// Comma-separated initializers to compare.
    #[arg(long, default_value = "euc-gw,geo-gw,fiedler-w,upca-w")]
    pub inits: String,
    /// Seed of every random choice.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub read: ReadArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub write: WriteArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Output directory of the replay.
    #[arg(long, default_value = "pw-replay")]
    pub out: PathBuf,
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    NotConverged,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<pw_core::Error>() {
            return if e.is_non_convergence() { 3 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot start {jobs} workers: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(cli.command, argv) {
        Ok(Status::Converged) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => {
            eprintln!("warning: the solver stopped at its iteration limit before converging");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
