//! Declarative run configuration with TOML persistence.
//!
//! A config file holds everything a run needs; command-line flags override
//! individual fields and the effective merged config is echoed into every
//! output directory for provenance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::EmbeddingFormat;
use crate::geometry::DEFAULT_EIGENVALUE_FLOOR;
use crate::mechanism::OovPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialize: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub embedding_path: Option<PathBuf>,
    pub embedding_format: EmbeddingFormat,
    /// Corpus files whose token union restricts the vocabulary.
    pub vocab_paths: Vec<PathBuf>,
    pub epsilon_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub repetitions: u32,
    pub seed: u64,
    pub oov_policy: OovPolicy,
    pub lowercase: bool,
    pub eigenvalue_floor: f64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            embedding_path: None,
            embedding_format: EmbeddingFormat::GloveText,
            vocab_paths: Vec::new(),
            epsilon_grid: vec![1.0, 5.0, 10.0, 20.0, 40.0],
            lambda_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            repetitions: 100,
            seed: 1,
            oov_policy: OovPolicy::PassThrough,
            lowercase: false,
            eigenvalue_floor: DEFAULT_EIGENVALUE_FLOOR,
            output_dir: PathBuf::from("metricdp-out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.epsilon_grid.is_empty() {
            return Err(ConfigError::Invalid("epsilon grid is empty".into()));
        }
        if !self.epsilon_grid.iter().all(|e| e.is_finite() && *e > 0.0) {
            return Err(ConfigError::Invalid(
                "epsilon grid values must be positive and finite".into(),
            ));
        }
        if self.lambda_grid.is_empty() {
            return Err(ConfigError::Invalid("lambda grid is empty".into()));
        }
        if !self
            .lambda_grid
            .iter()
            .all(|l| l.is_finite() && (0.0..=1.0).contains(l))
        {
            return Err(ConfigError::Invalid(
                "lambda grid values must lie in [0, 1]".into(),
            ));
        }
        if self.repetitions < 1 {
            return Err(ConfigError::Invalid(
                "repetitions must be at least 1".into(),
            ));
        }
        if !(self.eigenvalue_floor.is_finite() && self.eigenvalue_floor > 0.0) {
            return Err(ConfigError::Invalid(
                "eigenvalue floor must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}
