use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::Array2;
use pw_core::io::{write_cloud, CloudFormat};
use pw_core::measure::{apply_isometry, DiscreteMeasure, PermutedIsometry};
use pw_core::shapes::{circles_and_rectangles, dog_2d, torus_tube_3d};
use serde_json::Value;
use tempfile::TempDir;

fn pw(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pw"))
        .args(args)
        .current_dir(dir)
        .env("PW_JOBS", "1")
        .output()
        .expect("pw runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn put(dir: &Path, name: &str, cloud: &DiscreteMeasure) -> PathBuf {
    let path = dir.join(name);
    write_cloud(&path, cloud, CloudFormat::from_path(&path).unwrap()).unwrap();
    path
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap()
}

fn report(out: &Output) -> String {
    format!(
        "{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    )
}

#[test]
fn identical_files_are_at_distance_zero() {
    let dir = TempDir::new().unwrap();
    put(dir.path(), "dog.xyz", &dog_2d(80).unwrap());
    let out = pw(dir.path(), &["distance", "dog.xyz", "dog.xyz", "--out", "o"]);
    assert_eq!(code(&out), 0, "{}", report(&out));
    let stdout: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(stdout["distance"].as_f64().unwrap() <= 1e-9);
    assert_eq!(stdout, json(dir.path().join("o/distance.json")));
}

#[test]
fn rotated_copy_aligns_exactly() {
    let dir = TempDir::new().unwrap();
    let dog = dog_2d(120).unwrap();
    put(dir.path(), "a.csv", &dog);
    put(
        dir.path(),
        "b.ply",
        &apply_isometry(&dog, &PermutedIsometry::random(120, 2, true, 9)).unwrap(),
    );
    let out = pw(
        dir.path(),
        &["align", "a.csv", "b.ply", "--init", "fiedler", "--out", "o"],
    );
    assert_eq!(code(&out), 0, "{}", report(&out));
    assert!(json(dir.path().join("o/align.json"))["distance"].as_f64().unwrap() <= 1e-6);
    for name in ["aligned.xyz", "plan.csv", "map.csv", "trace.csv", "manifest.json"] {
        assert!(dir.path().join("o").join(name).exists(), "{name}");
    }
}

#[test]
fn input_errors_exit_2_and_iteration_cap_exits_3() {
    let dir = TempDir::new().unwrap();
    put(dir.path(), "flat.xyz", &dog_2d(40).unwrap());
    put(dir.path(), "tube.xyz", &torus_tube_3d(8, 5).unwrap());
    fs::write(dir.path().join("bad.xyz"), "0 0\n1 x\n").unwrap();
    let mismatch = pw(dir.path(), &["distance", "flat.xyz", "tube.xyz"]);
    assert_eq!(code(&mismatch), 2, "{}", report(&mismatch));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("dimension"));
    assert_eq!(code(&pw(dir.path(), &["distance", "flat.xyz", "bad.xyz"])), 2);
    assert_eq!(code(&pw(dir.path(), &["distance", "flat.xyz", "missing.xyz"])), 2);
    assert_eq!(
        code(&pw(dir.path(), &["distance", "flat.xyz", "flat.xyz", "--init", "nope"])),
        2
    );

    let other = apply_isometry(&dog_2d(40).unwrap(), &PermutedIsometry::random(40, 2, false, 1)).unwrap();
    put(dir.path(), "other.xyz", &other);
    let capped = pw(
        dir.path(),
        &[
            "distance",
            "flat.xyz",
            "other.xyz",
            "--init",
            "wasserstein",
            "--max-iters",
            "1",
            "--out",
            "o",
        ],
    );
    assert_eq!(code(&capped), 3, "{}", report(&capped));
    assert_eq!(
        json(dir.path().join("o/distance.json"))["converged"],
        Value::Bool(false)
    );
}

#[test]
fn provided_plan_is_used() {
    let dir = TempDir::new().unwrap();
    let dog = dog_2d(30).unwrap();
    put(dir.path(), "a.xyz", &dog);
    put(dir.path(), "b.xyz", &dog);
    let identity: String = (0..30)
        .map(|i| {
            (0..30)
                .map(|j| if i == j { "1" } else { "0" })
                .collect::<Vec<_>>()
                .join(",")
                + "\n"
        })
        .collect();
    fs::write(dir.path().join("plan.csv"), identity).unwrap();
    let out = pw(
        dir.path(),
        &[
            "distance",
            "a.xyz",
            "b.xyz",
            "--init",
            "provided:plan.csv",
            "--out",
            "o",
        ],
    );
    assert_eq!(code(&out), 0, "{}", report(&out));
    assert!(json(dir.path().join("o/distance.json"))["cost"].as_f64().unwrap() <= 1e-12);
    fs::write(dir.path().join("short.csv"), "1,0\n0,1\n").unwrap();
    assert_eq!(
        code(&pw(
            dir.path(),
            &["distance", "a.xyz", "b.xyz", "--init", "provided:short.csv"]
        )),
        2
    );
}

#[test]
fn barycenter_and_interpolation_write_their_outputs() {
    let dir = TempDir::new().unwrap();
    let (clouds, _) = circles_and_rectangles(1, 4).unwrap();
    put(dir.path(), "circle.xyz", &clouds[0]);
    put(dir.path(), "rect.xyz", &clouds[1]);

    let exact = pw(
        dir.path(),
        &[
            "barycenter",
            "circle.xyz",
            "rect.xyz",
            "--size",
            "20",
            "--init",
            "upca",
            "--out",
            "bary",
        ],
    );
    assert_eq!(code(&exact), 0, "{}", report(&exact));
    let summary = json(dir.path().join("bary/barycenter.json"));
    assert_eq!(summary["weights"].as_array().unwrap().len(), 20);
    let trace = fs::read_to_string(dir.path().join("bary/trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,objective\n"));

    let entropic = pw(
        dir.path(),
        &[
            "barycenter",
            "circle.xyz",
            "rect.xyz",
            "--size",
            "20",
            "--init",
            "upca",
            "--epsilon",
            "0.01",
            "--lambdas",
            "0.3,0.7",
            "--out",
            "ent",
            "--out-format",
            "csv",
        ],
    );
    assert_eq!(code(&entropic), 0, "{}", report(&entropic));
    assert!(dir.path().join("ent/barycenter.csv").exists());

    let interp = pw(
        dir.path(),
        &[
            "interpolate",
            "circle.xyz",
            "rect.xyz",
            "--etas",
            "0,0.5,1",
            "--size",
            "20",
            "--init",
            "upca",
            "--out",
            "mix",
        ],
    );
    assert_eq!(code(&interp), 0, "{}", report(&interp));
    for eta in ["0.0000", "0.5000", "1.0000"] {
        assert!(dir.path().join(format!("mix/eta_{eta}.xyz")).exists(), "{eta}");
    }
    let trace = fs::read_to_string(dir.path().join("mix/trace.csv")).unwrap();
    assert!(trace.starts_with("eta,iteration,objective\n"));
}

fn distance_between(dir: &Path, a: &str, b: &str) -> f64 {
    let out = pw(dir, &["distance", a, b, "--init", "upca", "--out", "check"]);
    assert_eq!(code(&out), 0, "{}", report(&out));
    serde_json::from_slice::<Value>(&out.stdout).unwrap()["distance"]
        .as_f64()
        .unwrap()
}

#[test]
fn barycenter_examples_recover_their_inputs() {
    let dir = TempDir::new().unwrap();
    // an uneven ellipse with as many points as the rectangle, so both
    // endpoints are reachable at one support size
    let (clouds, _) = circles_and_rectangles(1, 8).unwrap();
    let n = clouds[1].len();
    let ellipse = Array2::from_shape_fn((n, 2), |(i, c)| {
        let t = std::f64::consts::TAU * (i as f64 + 0.3 * (i % 3) as f64) / n as f64;
        if c == 0 {
            t.cos()
        } else {
            0.7 * t.sin()
        }
    });
    put(dir.path(), "ellipse.xyz", &DiscreteMeasure::uniform(ellipse).unwrap());
    put(dir.path(), "rect.xyz", &clouds[1]);
    let size = n.to_string();

    let single = pw(
        dir.path(),
        &[
            "barycenter",
            "rect.xyz",
            "--size",
            &size,
            "--init",
            "upca",
            "--out",
            "one",
        ],
    );
    assert_eq!(code(&single), 0, "{}", report(&single));
    assert!(distance_between(dir.path(), "one/barycenter.xyz", "rect.xyz") <= 1e-6);

    let ends = pw(
        dir.path(),
        &[
            "interpolate",
            "rect.xyz",
            "ellipse.xyz",
            "--etas",
            "0,1",
            "--init",
            "upca",
            "--out",
            "ends",
        ],
    );
    assert_eq!(code(&ends), 0, "{}", report(&ends));
    assert!(distance_between(dir.path(), "ends/eta_0.0000.xyz", "rect.xyz") <= 1e-6);
    assert!(distance_between(dir.path(), "ends/eta_1.0000.xyz", "ellipse.xyz") <= 1e-6);

    let entropic = pw(
        dir.path(),
        &[
            "barycenter",
            "ellipse.xyz",
            "rect.xyz",
            "--size",
            "20",
            "--epsilon",
            "0.01",
            "--init",
            "upca",
            "--out",
            "ent",
        ],
    );
    assert_eq!(code(&entropic), 0, "{}", report(&entropic));
    let trace: Vec<f64> = fs::read_to_string(dir.path().join("ent/trace.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-7), "{trace:?}");
}

#[test]
fn bench_init_writes_one_cell_per_initializer() {
    let dir = TempDir::new().unwrap();
    let out = pw(
        dir.path(),
        &["bench-init", "--shape", "dog", "--trials", "1", "--out", "b"],
    );
    assert_eq!(code(&out), 0, "{}", report(&out));
    let grid = fs::read_to_string(dir.path().join("b/grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 5);
    let summary = json(dir.path().join("b/grid.json"));
    assert_eq!(summary["rates"].as_object().unwrap().len(), 4);
}

fn write_dataset(root: &Path) {
    let (clouds, labels) = circles_and_rectangles(6, 11).unwrap();
    for (i, (cloud, label)) in clouds.iter().zip(labels).enumerate() {
        let class = root.join(["circle", "rectangle"][label]);
        fs::create_dir_all(&class).unwrap();
        put(&class, &format!("{i:02}.xyz"), cloud);
    }
}

#[test]
fn clustering_recovers_rotated_classes_under_pw_only() {
    let dir = TempDir::new().unwrap();
    write_dataset(&dir.path().join("data"));
    let run = |metric: &str| {
        let out = pw(
            dir.path(),
            &[
                "cluster",
                "data",
                "--metric",
                metric,
                "--centroid-size",
                "30",
                "--out",
                metric,
            ],
        );
        assert_eq!(code(&out), 0, "{}", report(&out));
        json(dir.path().join(metric).join("metrics.json"))
    };
    let pw_metrics = run("pw");
    let emd_metrics = run("emd");
    assert_eq!(pw_metrics["ari"].as_f64().unwrap(), 1.0);
    assert!(emd_metrics["ari"].as_f64().unwrap() < 1.0);
    let labels = fs::read_to_string(dir.path().join("pw/labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 13);
    assert!(dir.path().join("pw/confusion.csv").exists());
    assert!(dir.path().join("pw/centroids/centroid_1.xyz").exists());
}

/// Files of an output directory, with the fields that record wall-clock
/// time removed.
fn snapshot(dir: &Path) -> Vec<(String, String)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let name = path.strip_prefix(dir).unwrap().display().to_string();
            let mut text = fs::read_to_string(&path).unwrap();
            if name.ends_with(".json") {
                let mut v: Value = serde_json::from_str(&text).unwrap();
                if let Some(obj) = v.as_object_mut() {
                    obj.remove("timings");
                    obj.remove("seconds");
                    obj.remove("argv");
                    obj.remove("config");
                }
                text = v.to_string();
            }
            files.push((name, text));
        }
    }
    files.sort();
    files
}

#[test]
fn reruns_and_replays_are_identical() {
    let dir = TempDir::new().unwrap();
    write_dataset(&dir.path().join("data"));
    let args = [
        "cluster",
        "data",
        "--metric",
        "pw",
        "--centroid-size",
        "20",
        "--max-rounds",
        "3",
        "--seed",
        "5",
    ];
    let first = pw(dir.path(), &[&args[..], &["--out", "one"]].concat());
    assert_eq!(code(&first), 0, "{}", report(&first));
    let second = pw(dir.path(), &[&args[..], &["--out", "two"]].concat());
    assert_eq!(code(&second), 0, "{}", report(&second));
    assert_eq!(snapshot(&dir.path().join("one")), snapshot(&dir.path().join("two")));

    let replay = pw(dir.path(), &["replay", "one/manifest.json", "--out", "three"]);
    assert_eq!(code(&replay), 0, "{}", report(&replay));
    assert_eq!(snapshot(&dir.path().join("one")), snapshot(&dir.path().join("three")));

    fs::write(dir.path().join("data/circle/00.xyz"), "0 0\n1 1\n2 0\n").unwrap();
    let stale = pw(dir.path(), &["replay", "one/manifest.json", "--out", "four"]);
    assert_eq!(code(&stale), 2, "{}", report(&stale));
}
