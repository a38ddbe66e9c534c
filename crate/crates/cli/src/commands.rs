use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Parser;
use ndarray::{Array1, Array2};
use serde::Serialize;

use pw_core::barycenter::{
    interpolate, solve_barycenter_with, BarycenterConfig, BarycenterProblem, BarycenterState, WeightOptConfig,
};
use pw_core::bench::{run_convergence_grid, BenchConfig, BenchStop};
use pw_core::clustering::{
    adjusted_rand_index, confusion_matrix, normalized_mutual_info, pw_kmeans, ClusterMetric, ClusteringConfig,
};
use pw_core::init::{InitKind, InitStrategy};
use pw_core::io::{read_cloud_with, read_labeled_dir, CloudFormat, ReadOptions};
use pw_core::measure::DiscreteMeasure;
use pw_core::pw::{pw_distance, CouplingSolver, PwSolution, PwStopRule};
use pw_core::shapes::{bundled_dog, bundled_tube};
use pw_core::transport::{SinkhornConfig, TransportPlan};

use crate::output::{digest, matrix_csv, matrix_rows, read_manifest, Run};
use crate::{
    BarycenterArgs, BenchArgs, Cli, ClusterArgs, Command, InterpolateArgs, PairArgs, ReadArgs, ReplayArgs, SolverArgs,
    Status, WriteArgs,
};

/// Couplings entries at or below this count as zero in summaries.
const PLAN_ZERO: f64 = 1e-12;

pub fn run(command: Command, argv: Vec<String>) -> Result<Status> {
    match command {
        Command::Distance(args) => distance(args, argv, false),
        Command::Align(args) => distance(args, argv, true),
        Command::Barycenter(args) => barycenter(args, argv),
        Command::Interpolate(args) => interpolation(args, argv),
        Command::Cluster(args) => cluster(args, argv),
        Command::BenchInit(args) => bench_init(args, argv),
        Command::Replay(args) => replay(args),
    }
}

fn status(converged: bool) -> Status {
    if converged {
        Status::Converged
    } else {
        Status::NotConverged
    }
}

fn read_options(read: &ReadArgs) -> ReadOptions {
    ReadOptions {
        threshold: read.threshold,
        normalize: !read.raw,
    }
}

fn read_input(run: &mut Run, path: &Path, read: &ReadArgs) -> Result<DiscreteMeasure> {
    let format = match &read.format {
        Some(f) => f.parse()?,
        None => CloudFormat::from_path(path)?,
    };
    run.input(digest(path)?);
    let cloud =
        read_cloud_with(path, format, &read_options(read)).with_context(|| format!("reading {}", path.display()))?;
    Ok(cloud)
}

fn out_format(write: &WriteArgs) -> Result<CloudFormat> {
    let f: CloudFormat = write.out_format.parse()?;
    if f == CloudFormat::Pgm {
        bail!("clouds cannot be written as PGM");
    }
    Ok(f)
}

fn stop_rule(solver: &SolverArgs) -> PwStopRule {
    PwStopRule {
        rel_tol: solver.tol,
        max_iters: solver.max_iters,
    }
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .with_context(|| format!("bad {what} value '{t}'"))
        })
        .collect()
}

/// Reads a coupling matrix (comma- or whitespace-separated rows) and scales
/// it to unit mass.
fn read_plan(path: &Path, a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<TransportPlan> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| pw_core::Error::Parse {
                location: format!("line {}", i + 1),
                message: e.to_string(),
            })?;
        if row.len() != b.len() {
            return Err(pw_core::Error::DimensionMismatch(format!(
                "plan row {} has {} entries, second cloud has {} points",
                i + 1,
                row.len(),
                b.len()
            ))
            .into());
        }
        values.extend(row);
        rows += 1;
    }
    if rows != a.len() {
        return Err(pw_core::Error::DimensionMismatch(format!(
            "plan has {rows} rows, first cloud has {} points",
            a.len()
        ))
        .into());
    }
    let mut coupling = Array2::from_shape_vec((rows, b.len()), values)?;
    let total = coupling.sum();
    if total > 0.0 {
        coupling /= total;
    }
    Ok(TransportPlan::new(coupling, a.weights(), b.weights())?)
}

fn init_strategy(solver: &SolverArgs, pair: Option<(&DiscreteMeasure, &DiscreteMeasure)>) -> Result<InitStrategy> {
    if let Some(file) = solver.init.strip_prefix("provided:") {
        let Some((a, b)) = pair else {
            return Err(
                pw_core::Error::InvalidArgument("a provided plan only applies to a pair of clouds".into()).into(),
            );
        };
        return Ok(InitStrategy::provided(read_plan(Path::new(file), a, b)?).with_knn_k(solver.knn_k));
    }
    let kind: InitKind = solver.init.parse()?;
    Ok(InitStrategy::new(kind).with_knn_k(solver.knn_k))
}

#[derive(Serialize)]
struct PlanSummary {
    rows: usize,
    cols: usize,
    nonzeros: usize,
    marginal_defect: f64,
}

#[derive(Serialize)]
struct DistanceReport {
    cost: f64,
    distance: f64,
    iterations: usize,
    converged: bool,
    init: String,
    map: Vec<Vec<f64>>,
    determinant: f64,
    plan_summary: PlanSummary,
}

fn distance_report(sol: &PwSolution, init: &str) -> DistanceReport {
    let (rows, cols) = sol.plan.dim();
    DistanceReport {
        cost: sol.cost,
        distance: sol.distance,
        iterations: sol.iterations,
        converged: sol.converged,
        init: init.to_string(),
        map: matrix_rows(sol.map.matrix()),
        determinant: sol.map.determinant(),
        plan_summary: PlanSummary {
            rows,
            cols,
            nonzeros: sol.plan.count_above(PLAN_ZERO),
            marginal_defect: sol.plan.marginal_defect(),
        },
    }
}

fn distance(args: PairArgs, argv: Vec<String>, align: bool) -> Result<Status> {
    let command = if align { "align" } else { "distance" };
    let mut run = Run::new(command, argv, serde_json::to_value(&args)?, &args.write.out);
    let format = out_format(&args.write)?;
    let a = read_input(&mut run, &args.first, &args.read)?;
    let b = read_input(&mut run, &args.second, &args.read)?;
    if a.dim() != b.dim() {
        return Err(pw_core::Error::DimensionMismatch(format!(
            "{} is {}-dimensional, {} is {}-dimensional",
            args.first.display(),
            a.dim(),
            args.second.display(),
            b.dim()
        ))
        .into());
    }
    run.phase("read");
    let init = init_strategy(&args.solver, Some((&a, &b)))?;
    let sol = pw_distance(&a, &b, &init, &stop_rule(&args.solver))?;
    run.phase("solve");

    let report = distance_report(&sol, &args.solver.init);
    println!("{}", serde_json::to_string_pretty(&report)?);
    run.json(&format!("{command}.json"), &report)?;
    run.file("trace.csv", trace_csv(&sol.objective_trace));
    if align {
        run.cloud("aligned", &b.transformed(sol.map.matrix())?, format)?;
        run.file("plan.csv", matrix_csv(sol.plan.coupling()));
        run.file("map.csv", matrix_csv(sol.map.matrix()));
    }
    run.finish()?;
    Ok(status(sol.converged))
}

fn trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("iteration,objective\n");
    for (i, v) in trace.iter().enumerate() {
        out.push_str(&format!("{},{v:?}\n", i + 1));
    }
    out
}

fn barycenter_config(solver: &SolverArgs, epsilon: f64, optimize: bool) -> Result<BarycenterConfig> {
    if epsilon < 0.0 {
        bail!(pw_core::Error::InvalidArgument("epsilon must be non-negative".into()));
    }
    let mut cfg = BarycenterConfig {
        init: init_strategy(solver, None)?,
        stop: stop_rule(solver),
        weight_opt: optimize.then(WeightOptConfig::default),
        ..BarycenterConfig::default()
    };
    if epsilon > 0.0 {
        cfg.solver = CouplingSolver::Entropic(SinkhornConfig::new(epsilon));
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct InputFit {
    cost: f64,
    map: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct BarycenterReport {
    objective: f64,
    iterations: usize,
    converged: bool,
    lambdas: Vec<f64>,
    weights: Vec<f64>,
    inputs: Vec<InputFit>,
}

fn barycenter_report(state: &BarycenterState, lambdas: &[f64]) -> BarycenterReport {
    BarycenterReport {
        objective: state.objective,
        iterations: state.iterations,
        converged: state.converged,
        lambdas: lambdas.to_vec(),
        weights: state.weights.to_vec(),
        inputs: state
            .per_input
            .iter()
            .map(|s| InputFit {
                cost: s.cost,
                map: matrix_rows(s.map.matrix()),
            })
            .collect(),
    }
}

fn barycenter(args: BarycenterArgs, argv: Vec<String>) -> Result<Status> {
    let mut run = Run::new("barycenter", argv, serde_json::to_value(&args)?, &args.write.out);
    let format = out_format(&args.write)?;
    let inputs = args
        .inputs
        .iter()
        .map(|p| read_input(&mut run, p, &args.read))
        .collect::<Result<Vec<_>>>()?;
    run.phase("read");
    let size = args.size.unwrap_or(inputs[0].len());
    let r = inputs.len();
    let lambdas = match &args.lambdas {
        Some(text) => parse_list(text, "lambda")?,
        None => vec![1.0 / r as f64; r],
    };
    let cfg = barycenter_config(&args.solver, args.epsilon, args.optimize_weights)?;
    let problem = BarycenterProblem::new(inputs, size)
        .with_lambdas(Array1::from(lambdas.clone()))
        .with_seed(args.seed);
    let state = solve_barycenter_with(&problem, &cfg)?;
    run.phase("solve");

    let report = barycenter_report(&state, &lambdas);
    println!("{}", serde_json::to_string_pretty(&report)?);
    run.cloud("barycenter", &state.measure()?, format)?;
    run.file("trace.csv", trace_csv(&state.objective_trace));
    run.json("barycenter.json", &report)?;
    run.finish()?;
    Ok(status(state.converged))
}

fn interpolation(args: InterpolateArgs, argv: Vec<String>) -> Result<Status> {
    let mut run = Run::new("interpolate", argv, serde_json::to_value(&args)?, &args.write.out);
    let format = out_format(&args.write)?;
    let a = read_input(&mut run, &args.first, &args.read)?;
    let b = read_input(&mut run, &args.second, &args.read)?;
    run.phase("read");
    let etas = parse_list(&args.etas, "eta")?;
    let cfg = barycenter_config(&args.solver, args.epsilon, false)?;
    let states = interpolate(&a, &b, &etas, args.size.unwrap_or(a.len()), &cfg, args.seed)?;
    run.phase("solve");

    let mut trace = String::from("eta,iteration,objective\n");
    let mut summary = Vec::new();
    for (eta, state) in etas.iter().zip(&states) {
        run.cloud(&format!("eta_{eta:.4}"), &state.measure()?, format)?;
        for (i, v) in state.objective_trace.iter().enumerate() {
            trace.push_str(&format!("{eta:?},{},{v:?}\n", i + 1));
        }
        summary.push(serde_json::json!({
            "eta": eta,
            "objective": state.objective,
            "iterations": state.iterations,
            "converged": state.converged,
        }));
        println!(
            "eta {eta:.4}: objective {:.6e} after {} iterations",
            state.objective, state.iterations
        );
    }
    run.file("trace.csv", trace);
    run.json("interpolate.json", &summary)?;
    run.finish()?;
    Ok(status(states.iter().all(|s| s.converged)))
}

#[derive(Serialize)]
struct ClusterReport {
    metric: String,
    k: usize,
    classes: Vec<String>,
    clouds: usize,
    ari: f64,
    nmi: f64,
    rounds: usize,
    converged: bool,
    distortion_trace: Vec<f64>,
    /// Wall-clock time of the clustering phase; differs between runs.
    seconds: f64,
}

fn cluster(args: ClusterArgs, argv: Vec<String>) -> Result<Status> {
    let mut run = Run::new("cluster", argv, serde_json::to_value(&args)?, &args.write.out);
    let format = out_format(&args.write)?;
    let metric: ClusterMetric = args.metric.parse()?;
    let items = read_labeled_dir(&args.dataset, &read_options(&args.read))
        .with_context(|| format!("reading dataset {}", args.dataset.display()))?;
    for item in &items {
        run.input(digest(&item.path)?);
    }
    let mut classes: Vec<String> = items.iter().map(|c| c.class.clone()).collect();
    classes.dedup();
    let truth: Vec<usize> = items
        .iter()
        .map(|c| classes.iter().position(|k| *k == c.class).expect("class listed"))
        .collect();
    let clouds: Vec<DiscreteMeasure> = items.iter().map(|c| c.measure.clone()).collect();
    run.phase("read");

    let mut cfg = ClusteringConfig::new(args.k.unwrap_or(classes.len()), metric);
    cfg.centroid_size = args.centroid_size;
    cfg.max_rounds = args.max_rounds;
    cfg.rng_seed = args.seed;
    cfg.init = init_strategy(&args.solver, None)?;
    cfg.stop = stop_rule(&args.solver);
    let clock = Instant::now();
    let result = pw_kmeans(&clouds, &cfg)?;
    let seconds = clock.elapsed().as_secs_f64();
    run.phase("cluster");

    let ari = adjusted_rand_index(&truth, &result.labels)?;
    let nmi = normalized_mutual_info(&truth, &result.labels)?;
    if metric.uses_medoids() {
        println!("# metric {}: centroids are medoids (member clouds)", metric.name());
    }
    println!(
        "ARI {ari:.4}  NMI {nmi:.4}  rounds {}  clouds {}",
        result.rounds,
        clouds.len()
    );

    let mut labels = String::from("path,class,cluster\n");
    for (item, label) in items.iter().zip(&result.labels) {
        labels.push_str(&format!("{},{},{label}\n", item.path.display(), item.class));
    }
    run.file("labels.csv", labels);
    let mut confusion = String::from("class");
    for c in 0..cfg.k {
        confusion.push_str(&format!(",cluster_{c}"));
    }
    confusion.push('\n');
    for (class, row) in classes.iter().zip(confusion_matrix(&truth, &result.labels)?) {
        confusion.push_str(class);
        for count in row.iter().chain(std::iter::repeat(&0)).take(cfg.k) {
            confusion.push_str(&format!(",{count}"));
        }
        confusion.push('\n');
    }
    run.file("confusion.csv", confusion);
    for (c, centroid) in result.centroids.iter().enumerate() {
        run.cloud(&format!("centroids/centroid_{c}"), centroid, format)?;
    }
    run.json(
        "metrics.json",
        &ClusterReport {
            metric: metric.name().to_string(),
            k: cfg.k,
            classes,
            clouds: clouds.len(),
            ari,
            nmi,
            rounds: result.rounds,
            converged: result.converged,
            distortion_trace: result.distortion_trace.clone(),
            seconds,
        },
    )?;
    run.finish()?;
    Ok(Status::Converged)
}

fn bench_init(args: BenchArgs, argv: Vec<String>) -> Result<Status> {
    let mut run = Run::new("bench-init", argv, serde_json::to_value(&args)?, &args.write.out);
    let pivot = match (&args.pivot, args.shape.as_deref()) {
        (Some(path), _) => read_input(&mut run, path, &args.read)?,
        (None, None | Some("dog")) => bundled_dog()?,
        (None, Some("tube")) => bundled_tube()?,
        (None, Some(other)) => bail!(pw_core::Error::InvalidArgument(format!(
            "unknown shape '{other}' (dog, tube)"
        ))),
    };
    run.phase("read");
    let inits = args
        .inits
        .split(',')
        .map(|s| s.trim().parse::<InitKind>())
        .collect::<pw_core::Result<Vec<_>>>()?;
    let cfg = BenchConfig {
        trials: args.trials,
        noise_sigma: args.noise,
        extra_vertices: args.extra_vertices,
        seed: args.seed,
        success_threshold: args.success_threshold,
        inits: inits.clone(),
        knn_k: args.solver.knn_k,
        stop: BenchStop {
            rel_tol: args.solver.tol,
            max_iters: args.solver.max_iters,
        },
        ..BenchConfig::default()
    };
    let grid = run_convergence_grid(&pivot, &cfg)?;
    run.phase("grid");

    let rates: BTreeMap<&str, f64> = inits.iter().map(|&k| (k.name(), grid.success_rate(k))).collect();
    println!("threshold {:.3e}, {} trials", grid.threshold, grid.trials);
    for &k in &inits {
        println!("{:>12}  {:.3}", k.name(), grid.success_rate(k));
    }
    run.file("grid.csv", grid.to_csv());
    run.json(
        "grid.json",
        &serde_json::json!({ "threshold": grid.threshold, "trials": grid.trials, "rates": rates, "cells": grid.cells }),
    )?;
    run.finish()?;
    Ok(Status::Converged)
}

/// Swaps the output directory of a recorded argv for `out`.
fn with_out(argv: &[String], out: &Path) -> Vec<String> {
    let mut next = Vec::with_capacity(argv.len() + 2);
    let mut skip = false;
    for a in argv {
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            next.push(a.clone());
        }
    }
    next.push("--out".into());
    next.push(out.display().to_string());
    next
}

fn replay(args: ReplayArgs) -> Result<Status> {
    let manifest = read_manifest(&args.manifest)?;
    for input in &manifest.inputs {
        let now = digest(&input.path)?;
        if now.sha256 != input.sha256 {
            bail!(pw_core::Error::InvalidArgument(format!(
                "{} changed since the recorded run",
                input.path.display()
            )));
        }
    }
    let argv = with_out(&manifest.argv, &args.out);
    let cli = Cli::try_parse_from(std::iter::once("pw".to_string()).chain(argv.iter().cloned()))
        .context("the manifest holds an argument list this version cannot parse")?;
    if matches!(cli.command, Command::Replay(_)) {
        bail!(pw_core::Error::InvalidArgument(
            "a replay manifest cannot point to another replay".into()
        ));
    }
    eprintln!("replaying: pw {}", argv.join(" "));
    run(cli.command, argv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_flag_is_replaced() {
        let argv: Vec<String> = ["distance", "a.xyz", "--out", "x", "b.xyz", "--out=y"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(
            with_out(&argv, Path::new("z")),
            vec!["distance", "a.xyz", "b.xyz", "--out", "z"]
        );
    }
}
