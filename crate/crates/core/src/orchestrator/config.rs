use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aci::DEFAULT_IOU_THRESHOLD;
use crate::llm::{HashEmbedder, ModelConfig, RetryPolicy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config {path} is not valid: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingBackend {
    /// Offline feature hashing.
    Hash,
    /// `/embeddings` on the model endpoint.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub backend: EmbeddingBackend,
    pub model_name: String,
    pub dim: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            backend: EmbeddingBackend::Hash,
            model_name: "text-embedding-3-small".into(),
            dim: HashEmbedder::DEFAULT_DIM,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Endpoint answering `{"query"}` with `{"answer"}`.
    pub url: Option<String>,
    /// Directory of canned `<digest>.txt` answers; wins over `url`.
    pub stub_dir: Option<PathBuf>,
    pub timeout_secs: Option<u64>,
}

/// Everything that shapes a run. Loaded from TOML; every field has a
/// default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub embedding: EmbeddingConfig,
    pub search: SearchConfig,
    pub retry: RetryPolicy,
    /// Where `narrative.jsonl` and `episodic.jsonl` live; in-memory stores
    /// when unset.
    pub memory_dir: Option<PathBuf>,
    pub trace_dir: Option<PathBuf>,
    /// Record full prompt and reply text in model-call events.
    pub full_trace: bool,
    pub web_search: bool,
    pub narrative_memory: bool,
    pub episodic_memory: bool,
    pub max_steps_total: usize,
    pub max_steps_per_subtask: usize,
    pub max_replans: usize,
    pub reflection_interval: usize,
    pub iou_threshold: f64,
    pub retrieval_k: usize,
    pub exploration_tasks: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            embedding: EmbeddingConfig::default(),
            search: SearchConfig::default(),
            retry: RetryPolicy::default(),
            memory_dir: None,
            trace_dir: None,
            full_trace: false,
            web_search: true,
            narrative_memory: true,
            episodic_memory: true,
            max_steps_total: 50,
            max_steps_per_subtask: 15,
            max_replans: 3,
            reflection_interval: 3,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            retrieval_k: 1,
            exploration_tasks: 5,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks limits and ranges. The model endpoint is only checked when an
    /// HTTP backend is built from it.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.max_steps_total == 0 {
            return invalid("max_steps_total must be positive");
        }
        if self.max_steps_per_subtask == 0 {
            return invalid("max_steps_per_subtask must be positive");
        }
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return invalid("iou_threshold must be within [0, 1]");
        }
        if self.retrieval_k == 0 {
            return invalid("retrieval_k must be at least 1");
        }
        if self.embedding.dim == 0 {
            return invalid("embedding.dim must be positive");
        }
        if self.exploration_tasks == 0 {
            return invalid("exploration_tasks must be at least 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg: RunConfig =
            toml::from_str("web_search = false\nmax_replans = 1\n[model]\nmodel_name = \"m\"\n")
                .unwrap();
        assert!(!cfg.web_search);
        assert_eq!(cfg.max_replans, 1);
        assert_eq!(cfg.model.model_name, "m");
        assert_eq!(cfg.max_steps_total, 50);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
        let cfg = RunConfig {
            iou_threshold: 1.5,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            max_steps_total: 0,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
