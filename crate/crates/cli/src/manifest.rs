use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;

#[derive(Serialize, Debug)]
pub struct RunManifest {
    pub subcommand: String,
    /// Every flag of the run, defaults included.
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<String>,
    pub tool_version: String,
    pub wall_time_secs: f64,
}

pub struct Recorder {
    subcommand: String,
    config: serde_json::Value,
    started: Instant,
}

impl Recorder {
    pub fn new(subcommand: &str, config: &impl Serialize) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            config: serde_json::to_value(config).expect("arguments serialize"),
            started: Instant::now(),
        }
    }

    pub fn finish(self, path: &Path, seeds: Vec<u64>, artifacts: &[PathBuf]) -> anyhow::Result<()> {
        let manifest = RunManifest {
            subcommand: self.subcommand,
            config: self.config,
            seeds,
            artifacts: artifacts.iter().map(|p| p.display().to_string()).collect(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_secs: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// `results.csv` → `results.manifest.json`.
pub fn beside(output: &Path) -> PathBuf {
    output.with_extension("manifest.json")
}
