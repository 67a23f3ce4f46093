//! OpenAI-compatible `/chat/completions` backend.

use std::time::Duration;

use base64::Engine as _;
use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatBackend, ChatMessage, Completion, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Base URL up to and including the API version, e.g.
    /// `https://api.openai.com/v1`.
    pub endpoint: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            endpoint: "http://localhost:8000/v1".into(),
            model_name: "gpt-4o".into(),
            temperature: 0.0,
            max_tokens: 1500,
            timeout_secs: 120,
            api_key: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        let url = reqwest::Url::parse(&self.endpoint)
            .map_err(|e| format!("endpoint `{}` is not a URL: {e}", self.endpoint))?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(format!(
                "endpoint `{}` must be http or https",
                self.endpoint
            ));
        }
        if self.model_name.trim().is_empty() {
            return Err("model_name is empty".into());
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            ));
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        if self.timeout_secs == 0 {
            return Err("timeout must be positive".into());
        }
        Ok(())
    }

    pub(crate) fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.endpoint.trim_end_matches('/'))
    }
}

pub struct OpenAiChatBackend {
    config: ModelConfig,
    http: Client,
}

impl OpenAiChatBackend {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::InvalidRequest)?;
        let http = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ModelError::Transport(e.to_string()))?;
        Ok(OpenAiChatBackend { config, http })
    }

    pub fn request_body(&self, messages: &[ChatMessage]) -> Result<Value, ModelError> {
        let messages = messages
            .iter()
            .map(wire_message)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(json!({
            "model": self.config.model_name,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }))
    }
}

fn image_url(image: &str) -> Result<String, ModelError> {
    if image.starts_with("data:") || image.starts_with("http://") || image.starts_with("https://") {
        return Ok(image.to_string());
    }
    let bytes = std::fs::read(image)
        .map_err(|e| ModelError::InvalidRequest(format!("cannot read image {image}: {e}")))?;
    let mime = match image
        .rsplit('.')
        .next()
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        _ => "image/png",
    };
    Ok(format!(
        "data:{mime};base64,{}",
        base64::engine::general_purpose::STANDARD.encode(bytes)
    ))
}

fn wire_message(m: &ChatMessage) -> Result<Value, ModelError> {
    if m.images.is_empty() {
        return Ok(json!({ "role": m.role.as_str(), "content": m.text }));
    }
    let mut parts = vec![json!({ "type": "text", "text": m.text })];
    for img in &m.images {
        parts.push(json!({ "type": "image_url", "image_url": { "url": image_url(img)? } }));
    }
    Ok(json!({ "role": m.role.as_str(), "content": parts }))
}

/// Extracts the first choice and token usage from a chat-completions body.
pub(crate) fn parse_completion(body: &Value) -> Result<Completion, ModelError> {
    let content = &body["choices"][0]["message"]["content"];
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join(""),
        Value::Null => String::new(),
        other => return Err(ModelError::Decode(format!("unexpected content {other}"))),
    };
    if body["choices"].as_array().is_none_or(Vec::is_empty) {
        return Err(ModelError::Decode("response has no choices".into()));
    }
    Ok(Completion {
        text,
        prompt_tokens: body["usage"]["prompt_tokens"].as_u64(),
        completion_tokens: body["usage"]["completion_tokens"].as_u64(),
    })
}

pub(crate) fn post_json(
    http: &Client,
    url: &str,
    api_key: Option<&str>,
    body: &Value,
) -> Result<Value, ModelError> {
    let mut req = http.post(url).json(body);
    if let Some(key) = api_key {
        req = req.bearer_auth(key);
    }
    let resp = req
        .send()
        .map_err(|e| ModelError::Transport(e.to_string()))?;
    let status = resp.status();
    let text = resp
        .text()
        .map_err(|e| ModelError::Transport(e.to_string()))?;
    if !status.is_success() {
        return Err(ModelError::Status {
            status: status.as_u16(),
            body: text.chars().take(500).collect(),
        });
    }
    serde_json::from_str(&text).map_err(|e| ModelError::Decode(e.to_string()))
}

impl ChatBackend for OpenAiChatBackend {
    fn name(&self) -> &str {
        &self.config.model_name
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, ModelError> {
        let body = self.request_body(messages)?;
        let resp = post_json(
            &self.http,
            &self.config.url("chat/completions"),
            self.config.api_key.as_deref(),
            &body,
        )?;
        parse_completion(&resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = |f: fn(&mut ModelConfig)| {
            let mut c = ModelConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.endpoint = "not a url".into()));
        assert!(bad(|c| c.endpoint = "ftp://x/v1".into()));
        assert!(bad(|c| c.temperature = -0.1));
        assert!(bad(|c| c.max_tokens = 0));
        assert!(bad(|c| c.model_name = " ".into()));
    }

    #[test]
    fn wire_format() {
        let b = OpenAiChatBackend::new(ModelConfig::default()).unwrap();
        let body = b
            .request_body(&[
                ChatMessage::system("sys"),
                ChatMessage::user("look").with_image("data:image/png;base64,AAAA"),
            ])
            .unwrap();
        assert_eq!(body["model"], "gpt-4o");
        assert_eq!(
            body["messages"][0],
            json!({"role": "system", "content": "sys"})
        );
        assert_eq!(body["messages"][1]["content"][1]["type"], "image_url");
        assert_eq!(
            body["messages"][1]["content"][1]["image_url"]["url"],
            "data:image/png;base64,AAAA"
        );
    }

    #[test]
    fn completion_parsing() {
        let c = parse_completion(&json!({
            "choices": [{"message": {"role": "assistant", "content": "ok"}}],
            "usage": {"prompt_tokens": 3, "completion_tokens": 1}
        }))
        .unwrap();
        assert_eq!(c.text, "ok");
        assert_eq!(c.prompt_tokens, Some(3));
        assert!(parse_completion(&json!({"choices": []})).is_err());
    }

    #[test]
    fn url_joining() {
        let c = ModelConfig {
            endpoint: "http://h:1/v1/".into(),
            ..ModelConfig::default()
        };
        assert_eq!(c.url("chat/completions"), "http://h:1/v1/chat/completions");
    }
}
