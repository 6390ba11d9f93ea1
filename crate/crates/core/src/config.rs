//! Run configuration: one TOML file with `[world]`, `[rl]` and `[repair]`
//! tables. Missing keys take their defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mend::RepairParams;
use crate::sarsa::LearnParams;
use crate::world::EnvConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: EnvConfig,
    pub rl: LearnParams,
    pub repair: RepairParams,
}

#[derive(Debug, Error)]
pub enum ConfigLoadError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing configuration: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigLoadError> {
        let c: RunConfig = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigLoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigLoadError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigLoadError> {
        self.world.validate().map_err(|e| ConfigLoadError::Invalid(e.to_string()))?;
        self.rl.validate().map_err(|e| ConfigLoadError::Invalid(e.to_string()))?;
        self.repair.validate().map_err(|e| ConfigLoadError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Sets the seed used by learning and repair.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rl.seed = seed;
        self.repair.seed = seed;
        self
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_tables() {
        let c = RunConfig::from_toml_str("[rl]\nkappa = 0.0\n[world]\nmud_factor = 0.5\n").unwrap();
        assert_eq!(c.rl.kappa, 0.0);
        assert_eq!(c.rl.alpha, 0.1);
        assert_eq!(c.world.mud_factor, 0.5);
    }

    #[test]
    fn unknown_keys_fail() {
        assert!(RunConfig::from_toml_str("[rl]\nkapa = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[rl]\nalpha = 2.0\n").is_err());
    }

    #[test]
    fn round_trip() {
        let c = RunConfig::default().with_seed(7);
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }
}
