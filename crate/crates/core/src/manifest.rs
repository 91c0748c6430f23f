//! Run manifests and configuration loading.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::experiment::ExperimentConfig;
use crate::lora::{expert_seed, ExpertKind};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "RDK_SEED";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{SEED_ENV}={0} is not an unsigned integer")]
    Seed(String),
}

/// Loads a JSON config (defaults for missing fields), then applies `RDK_SEED`.
pub fn load_config(path: Option<&Path>, seed_env: Option<&str>) -> Result<ExperimentConfig, ConfigError> {
    let mut config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ConfigError::Io { path: p.display().to_string(), message: e.to_string() })?;
            serde_json::from_str(&text)
                .map_err(|e| ConfigError::Parse { path: p.display().to_string(), message: e.to_string() })?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed_env {
        config.seed = s.trim().parse().map_err(|_| ConfigError::Seed(s.to_string()))?;
        config.world.seed = config.seed;
    }
    Ok(config)
}

pub fn file_hash(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub derived_seeds: BTreeMap<String, u64>,
    /// File name to SHA-256 of every input read.
    pub inputs: BTreeMap<String, String>,
    /// Artifact name to content hash of every output written.
    pub artifacts: BTreeMap<String, String>,
    pub crate_version: String,
}

impl RunManifest {
    pub fn new(command: Vec<String>, config: &ExperimentConfig) -> Self {
        let seed = config.seed;
        let mut derived_seeds = BTreeMap::new();
        derived_seeds.insert("pretrain".into(), seed);
        for k in [ExpertKind::Base, ExpertKind::HighLevel, ExpertKind::FineGrained, ExpertKind::MergedBaseline] {
            derived_seeds.insert(format!("expert.{}", k.name()), expert_seed(seed, k));
        }
        derived_seeds.insert("fusion".into(), seed);
        derived_seeds.insert("decode".into(), seed);
        Self {
            command,
            config: config.clone(),
            seed,
            derived_seeds,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    /// Records the hash of an input file.
    pub fn input(&mut self, path: &Path) -> std::io::Result<()> {
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.inputs.insert(name, file_hash(path)?);
        Ok(())
    }

    pub fn artifact(&mut self, name: &str, hash: String) {
        self.artifacts.insert(name.into(), hash);
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self).expect("manifest serializes"))
    }
}
