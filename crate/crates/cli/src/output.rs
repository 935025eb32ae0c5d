//! Output directory with atomic writes and the run manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize)]
pub struct TaskRecord {
    pub name: String,
    pub certified: bool,
    pub seconds: f64,
    /// Solver iterations at the certification checkpoint, summed over the task's solves.
    pub iters: usize,
}

/// Everything needed to trace a number in the output directory back to its run.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub version: String,
    pub seed: Option<u64>,
    pub workers: usize,
    pub grid_n: Option<usize>,
    pub tol_gap: Option<f64>,
    pub tasks: Vec<TaskRecord>,
    pub certified: bool,
    /// Empirical penalty threshold μ of penalized isoperimetric runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty_threshold: Option<f64>,
    pub outputs: Vec<String>,
    pub wall_seconds: f64,
}

pub fn digest(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Single writer for one run: every file goes through `write`, which renames
/// a temporary file into place and records the name for the manifest.
pub struct Run {
    dir: PathBuf,
    started: Instant,
    pub manifest: RunManifest,
}

impl Run {
    pub fn new(dir: &Path, command: &str, config: &[u8], workers: usize, seed: Option<u64>) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(Run {
            dir: dir.to_path_buf(),
            started: Instant::now(),
            manifest: RunManifest {
                command: command.into(),
                config_digest: digest(config),
                version: env!("CARGO_PKG_VERSION").into(),
                seed,
                workers,
                grid_n: None,
                tol_gap: None,
                tasks: Vec::new(),
                certified: true,
                penalty_threshold: None,
                outputs: Vec::new(),
                wall_seconds: 0.0,
            },
        })
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        atomic_write(&self.dir.join(name), contents.as_ref())?;
        if !self.manifest.outputs.iter().any(|o| o == name) {
            self.manifest.outputs.push(name.into());
        }
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    pub fn task(&mut self, name: impl Into<String>, certified: bool, started: Instant, iters: usize) {
        self.manifest.certified &= certified;
        self.manifest.tasks.push(TaskRecord {
            name: name.into(),
            certified,
            seconds: started.elapsed().as_secs_f64(),
            iters,
        });
    }

    /// Writes `manifest.json` last; the run is complete once it exists.
    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.wall_seconds = self.started.elapsed().as_secs_f64();
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        atomic_write(&self.dir.join("manifest.json"), text.as_bytes())?;
        Ok(self.manifest)
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("cannot move {} into place", path.display()))?;
    Ok(())
}
