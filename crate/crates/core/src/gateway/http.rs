//! OpenAI-compatible HTTP backend.
//!
//! Speaks `POST /v1/chat/completions` and `POST /v1/embeddings` against
//! any server implementing the OpenAI JSON shapes. The API key is read
//! from the environment variable named in [`BackendConfig::api_key_env`];
//! requests go out unauthenticated when it is unset.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{Backend, BackendConfig, BackendError, ChatRequest};

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    base_url: String,
    model: String,
    embed_model: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(cfg: &BackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_s))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpBackend {
            client,
            base_url: cfg.base_url.trim_end_matches('/').to_string(),
            model: cfg.model_name.clone(),
            embed_model: cfg.embed_model_name.clone(),
            api_key: std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty()),
        })
    }

    fn post(&self, path: &str, body: serde_json::Value) -> Result<serde_json::Value, BackendError> {
        let mut request = self.client.post(format!("{}{}", self.base_url, path)).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(BackendError::Status { code: status.as_u16(), body });
        }
        response
            .json::<serde_json::Value>()
            .map_err(|e| BackendError::Protocol(format!("invalid JSON response: {e}")))
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    index: usize,
    embedding: Vec<f64>,
}

impl Backend for HttpBackend {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if let Some(stop) = &req.stop {
            body["stop"] = json!(stop);
        }
        let value = self.post("/v1/chat/completions", body)?;
        let parsed: ChatResponse = serde_json::from_value(value)
            .map_err(|e| BackendError::Protocol(format!("unexpected chat shape: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| BackendError::Protocol("empty choices array".to_string()))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let body = json!({ "model": self.embed_model, "input": texts });
        let value = self.post("/v1/embeddings", body)?;
        let parsed: EmbedResponse = serde_json::from_value(value)
            .map_err(|e| BackendError::Protocol(format!("unexpected embeddings shape: {e}")))?;
        let mut data = parsed.data;
        data.sort_by_key(|d| d.index);
        if data.len() != texts.len() {
            return Err(BackendError::Protocol(format!(
                "requested {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        Ok(data.into_iter().map(|d| d.embedding).collect())
    }

    fn name(&self) -> &'static str {
        "http"
    }
}
