//! Flat key-value config file (TOML syntax, single table).
//!
//! Every key is optional; command-line flags always win over file values.
//! Secrets are never stored here, only the names of environment variables
//! that hold them.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse config file: {0}")]
    Parse(String),
}

/// Parsed config file. Field names are the accepted keys.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub index_path: Option<PathBuf>,
    pub lexicon_path: Option<PathBuf>,

    pub embedding_kind: Option<String>,
    pub embedding_dim: Option<usize>,
    pub embedding_endpoint: Option<String>,
    pub embedding_model: Option<String>,
    pub embedding_api_key_env: Option<String>,
    pub embedding_timeout_ms: Option<u64>,

    pub generation_kind: Option<String>,
    pub generation_endpoint: Option<String>,
    pub generation_model: Option<String>,
    pub generation_api_key_env: Option<String>,
    pub generation_script: Option<PathBuf>,
    pub generation_timeout_ms: Option<u64>,
    pub max_new_tokens: Option<u32>,
    pub temperature: Option<f64>,
    pub retry_base_ms: Option<u64>,

    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub k: Option<usize>,
    pub template: Option<String>,
    pub budget_tokens: Option<usize>,
    pub concurrency: Option<usize>,
    pub saturation: Option<f64>,
    /// Comma-separated list of query modifiers.
    pub modifiers: Option<String>,

    pub max_chunk_chars: Option<usize>,
    pub overlap_chars: Option<usize>,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path)?;
        toml::from_str(&raw).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Split the `modifiers` value on commas, trimming whitespace.
    pub fn modifier_list(&self) -> Option<Vec<String>> {
        self.modifiers.as_ref().map(|raw| {
            raw.split(',')
                .map(|m| m.trim().to_string())
                .filter(|m| !m.is_empty())
                .collect()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    #[test]
    fn parses_flat_key_values() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "alpha = 0.6").unwrap();
        writeln!(f, "beta = 0.4").unwrap();
        writeln!(f, "k = 3").unwrap();
        writeln!(f, "template = \"generic_v1\"").unwrap();
        writeln!(f, "embedding_kind = \"local_hash\"").unwrap();
        writeln!(f, "embedding_dim = 128").unwrap();
        writeln!(f, "modifiers = \"mechanism, differential diagnosis\"").unwrap();
        let cfg = AppConfig::load(f.path()).unwrap();
        assert_eq!(cfg.alpha, Some(0.6));
        assert_eq!(cfg.k, Some(3));
        assert_eq!(cfg.embedding_dim, Some(128));
        assert_eq!(
            cfg.modifier_list().unwrap(),
            vec!["mechanism".to_string(), "differential diagnosis".into()]
        );
    }

    #[test]
    fn rejects_unknown_keys() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "alhpa = 0.6").unwrap();
        assert!(matches!(
            AppConfig::load(f.path()),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn empty_file_is_all_defaults() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let cfg = AppConfig::load(f.path()).unwrap();
        assert_eq!(cfg, AppConfig::default());
    }
}
