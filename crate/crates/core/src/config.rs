use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::OrchestratorConfig;
use crate::perception::PerceptionConfig;
use crate::reconcile::{ReconcileConfig, RuleTable, RuleTableError};
use crate::sim::SimConfig;

/// Whole-system configuration, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    /// Directory of recipe documents; the bundled corpus is used when unset.
    pub recipes_dir: Option<PathBuf>,
    /// Substitution rule table; the default `sugar -> honey` table when unset.
    pub rules_path: Option<PathBuf>,
    pub perception: PerceptionConfig,
    pub reconcile: ReconcileConfig,
    pub sim: SimConfig,
    pub orchestrator: OrchestratorConfig,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("rule table: {0}")]
    Rules(#[from] RuleTableError),
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Reads `path`; relative paths inside the file resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut config = Self::from_toml(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.recipes_dir, &mut config.rules_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn rules(&self) -> Result<RuleTable, ConfigError> {
        match &self.rules_path {
            Some(path) => Ok(RuleTable::load(path)?),
            None => Ok(RuleTable::default()),
        }
    }
}
