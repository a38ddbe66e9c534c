use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pw_core::io::{format_cloud, CloudFormat};
use pw_core::measure::DiscreteMeasure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

pub fn digest(path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(InputDigest {
        path: path.to_path_buf(),
        sha256: format!("{:x}", Sha256::digest(&bytes)),
    })
}

/// Everything needed to reproduce a run. Timings are informational and the
/// only field that differs between identical runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    /// Seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

/// Collects inputs, timings and output files of one command, then writes
/// them from a single place.
pub struct Run {
    pub out: PathBuf,
    manifest: RunManifest,
    files: Vec<(PathBuf, Vec<u8>)>,
    clock: Instant,
}

impl Run {
    pub fn new(command: &str, argv: Vec<String>, config: serde_json::Value, out: &Path) -> Self {
        Self {
            out: out.to_path_buf(),
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME").to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                command: command.to_string(),
                argv,
                config,
                inputs: Vec::new(),
                timings: BTreeMap::new(),
            },
            files: Vec::new(),
            clock: Instant::now(),
        }
    }

    pub fn input(&mut self, d: InputDigest) {
        self.manifest.inputs.push(d);
    }

    /// Records the time since the previous phase ended.
    pub fn phase(&mut self, name: &str) {
        self.manifest
            .timings
            .insert(name.to_string(), self.clock.elapsed().as_secs_f64());
        self.clock = Instant::now();
    }

    pub fn file(&mut self, name: impl AsRef<Path>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.as_ref().to_path_buf(), bytes.into()));
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.file(name, text);
        Ok(())
    }

    pub fn cloud(&mut self, name: &str, measure: &DiscreteMeasure, format: CloudFormat) -> Result<()> {
        let text = format_cloud(measure, format)?;
        self.file(format!("{name}.{}", format.extension()), text);
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.phase("write");
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let manifest = serde_json::to_string_pretty(&self.manifest)? + "\n";
        self.files.push(("manifest.json".into(), manifest.into_bytes()));
        for (name, bytes) in &self.files {
            let path = self.out.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

pub fn matrix_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn matrix_csv(m: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
}
