use std::time::Duration;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::openai::{post_json, ModelConfig};
use super::ModelError;
use crate::fingerprint::fnv1a;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyInput,
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("expected dimension {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("embedding backend failed: {0}")]
    Backend(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(Embedding(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cosine similarity; zero when either vector has zero norm or the
/// dimensions differ.
pub fn cosine(a: &Embedding, b: &Embedding) -> f64 {
    if a.dim() != b.dim() {
        return 0.0;
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    dot / (na * nb)
}

pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError>;
}

/// Signed feature-hashing bag of words. Deterministic and offline.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { dim }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(Self::DEFAULT_DIM)
    }
}

impl Embedder for HashEmbedder {
    fn name(&self) -> &str {
        "hash-bow"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        let lower = text.to_lowercase();
        let mut tokens: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            tokens.push(&lower);
        }
        let mut v = vec![0.0; self.dim];
        for t in tokens {
            let h = fnv1a(t.as_bytes());
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        Embedding::new(v)
    }
}

/// OpenAI-compatible `/embeddings` backend.
pub struct HttpEmbedder {
    config: ModelConfig,
    dim: usize,
    http: Client,
}

impl HttpEmbedder {
    pub fn new(config: ModelConfig, dim: usize) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::InvalidRequest)?;
        let http = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ModelError::Transport(e.to_string()))?;
        Ok(HttpEmbedder { config, dim, http })
    }
}

impl Embedder for HttpEmbedder {
    fn name(&self) -> &str {
        &self.config.model_name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        let body = json!({ "model": self.config.model_name, "input": text });
        let resp = post_json(
            &self.http,
            &self.config.url("embeddings"),
            self.config.api_key.as_deref(),
            &body,
        )?;
        let values: Vec<f64> = serde_json::from_value(resp["data"][0]["embedding"].clone())
            .map_err(|e| ModelError::Decode(e.to_string()))?;
        if values.len() != self.dim {
            return Err(EmbedError::Dimension {
                expected: self.dim,
                actual: values.len(),
            });
        }
        Embedding::new(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_embedder_is_deterministic() {
        let e = HashEmbedder::default();
        let a = e.embed("Open the Thunderbird account settings").unwrap();
        assert_eq!(a, e.embed("Open the Thunderbird account settings").unwrap());
        assert_eq!(a.dim(), 256);
        assert_eq!(HashEmbedder::new(17).embed("x").unwrap().dim(), 17);
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn punctuation_only_text_still_embeds() {
        let e = HashEmbedder::default();
        let a = e.embed("!!!").unwrap();
        assert!(a.norm() > 0.0);
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_text_rejected() {
        assert_eq!(
            HashEmbedder::default().embed("  "),
            Err(EmbedError::EmptyInput)
        );
    }

    #[test]
    fn cosine_edge_cases() {
        let z = Embedding::new(vec![0.0, 0.0]).unwrap();
        let a = Embedding::new(vec![1.0, 0.0]).unwrap();
        let b = Embedding::new(vec![0.0, 2.0]).unwrap();
        let c = Embedding::new(vec![1.0]).unwrap();
        assert_eq!(cosine(&z, &a), 0.0);
        assert_eq!(cosine(&a, &b), 0.0);
        assert_eq!(cosine(&a, &c), 0.0);
        assert!(Embedding::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn related_texts_score_higher() {
        let e = HashEmbedder::default();
        let q = e.embed("remove email account thunderbird").unwrap();
        let near = e
            .embed("how to remove an email account in thunderbird")
            .unwrap();
        let far = e.embed("change line spacing in writer").unwrap();
        assert!(cosine(&q, &near) > cosine(&q, &far));
    }
}
