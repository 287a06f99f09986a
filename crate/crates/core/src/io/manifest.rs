//! Per-run manifest: what ran, with which configuration, producing what.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// Artifact role to path.
    pub artifacts: BTreeMap<String, String>,
    /// Stage name to seconds.
    pub wall_times: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            config_hash: cfg.hash(),
            seeds: cfg.seeds().into_iter().collect(),
            ..Default::default()
        }
    }

    pub fn artifact(&mut self, role: &str, path: &Path) {
        self.artifacts.insert(role.to_string(), path.display().to_string());
    }

    pub fn time(&mut self, stage: &str, seconds: f64) {
        self.wall_times.insert(stage.to_string(), seconds);
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.into(),
            reason: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_hash_and_seeds() {
        let cfg = RunConfig::default();
        let mut m = Manifest::new("tokenize", &cfg);
        m.artifact("tokenizer", Path::new("a/tok.bin"));
        m.time("train", 1.5);
        assert_eq!(m.config_hash, cfg.hash());
        assert_eq!(m.seeds["ar.seed"], 0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        assert_eq!(Manifest::load(&p).unwrap(), m);
    }
}
