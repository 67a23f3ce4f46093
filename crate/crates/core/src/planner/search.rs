use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Duration;

use reqwest::blocking::Client;
use serde_json::json;
use thiserror::Error;

use crate::fingerprint;
use crate::llm::{post_json, ModelError};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("search request failed: {0}")]
    Request(#[from] ModelError),
    #[error("search response has no `answer` string")]
    Malformed,
    #[error("no stub answer for query {digest}")]
    NoStub { digest: String },
    #[error("cannot read stub answer {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Turns a how-to query into a text answer.
pub trait SearchClient: Send + Sync {
    fn name(&self) -> &str;
    fn search(&self, query: &str) -> Result<String, SearchError>;
}

/// Posts `{"query": ...}` to a search endpoint that answers with
/// `{"answer": ...}`.
pub struct HttpSearch {
    url: String,
    http: Client,
}

impl HttpSearch {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Result<Self, SearchError> {
        let http = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ModelError::Transport(e.to_string()))?;
        Ok(HttpSearch {
            url: url.into(),
            http,
        })
    }
}

impl SearchClient for HttpSearch {
    fn name(&self) -> &str {
        "http"
    }

    fn search(&self, query: &str) -> Result<String, SearchError> {
        let resp = post_json(&self.http, &self.url, None, &json!({ "query": query }))?;
        resp["answer"]
            .as_str()
            .map(str::to_string)
            .ok_or(SearchError::Malformed)
    }
}

/// Canned answers, looked up by the query's fingerprint digest: either
/// `<dir>/<digest>.txt` files or an in-memory map keyed by query text.
pub enum StubSearch {
    Dir(PathBuf),
    Map(HashMap<String, String>),
}

impl StubSearch {
    pub fn from_dir(dir: impl Into<PathBuf>) -> Self {
        StubSearch::Dir(dir.into())
    }

    pub fn from_map(answers: HashMap<String, String>) -> Self {
        StubSearch::Map(
            answers
                .into_iter()
                .map(|(q, a)| (fingerprint::digest(&q), a))
                .collect(),
        )
    }
}

impl SearchClient for StubSearch {
    fn name(&self) -> &str {
        "stub"
    }

    fn search(&self, query: &str) -> Result<String, SearchError> {
        let digest = fingerprint::digest(query);
        match self {
            StubSearch::Map(m) => m
                .get(&digest)
                .cloned()
                .ok_or(SearchError::NoStub { digest }),
            StubSearch::Dir(dir) => {
                let path = dir.join(format!("{digest}.txt"));
                match std::fs::read_to_string(&path) {
                    Ok(s) => Ok(s),
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                        Err(SearchError::NoStub { digest })
                    }
                    Err(source) => Err(SearchError::Io {
                        path: path.display().to_string(),
                        source,
                    }),
                }
            }
        }
    }
}
