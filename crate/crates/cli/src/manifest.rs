use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use splatfuse_core::io::EngineConfig;

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub scene: Option<PathBuf>,
    pub context: Vec<usize>,
    pub targets: Vec<usize>,
    pub outputs: Vec<PathBuf>,
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, config: &EngineConfig, seed: u64, threads: Option<usize>) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config_map(config),
            seed,
            threads,
            scene: None,
            context: Vec::new(),
            targets: Vec::new(),
            outputs: Vec::new(),
            timings_ms: BTreeMap::new(),
        }
    }

    /// Rebuilds the engine configuration the run used.
    pub fn engine_config(&self) -> Result<EngineConfig> {
        let text: String = self.config.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        Ok(EngineConfig::from_text(Path::new("<manifest>"), &text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s).with_context(|| format!("writing manifest {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

pub fn config_map(config: &EngineConfig) -> BTreeMap<String, String> {
    config
        .to_text()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// `out.ply` -> `out.ply.manifest.json`; directories get `manifest.json` inside.
pub fn manifest_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        return output.join("manifest.json");
    }
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
