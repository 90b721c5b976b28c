//! Sole boundary to generative and embedding models.
//!
//! Everything the pipeline asks of a model — chat completion, embedding,
//! binary judging, scalar scoring — goes through [`LlmGateway`]. The
//! gateway owns retries with exponential backoff, a concurrency cap, an
//! embedding cache keyed by content hash, and a JSONL audit log. Backends
//! are pluggable: [`http::HttpBackend`] speaks the OpenAI-compatible wire
//! protocol and [`mock::MockBackend`] is a pure function of its seed and
//! the request content, which makes whole-pipeline runs reproducible
//! offline.

pub mod http;
pub mod mock;

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::hash::sha256_hex;

/// Transport-level failure reported by a backend.
#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl BackendError {
    /// Transport problems and 5xx/429 responses are worth retrying;
    /// other client errors and malformed replies are not.
    pub fn retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { code, .. } => *code >= 500 || *code == 429,
            BackendError::Protocol(_) => false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("empty prompt for request tag {0}")]
    EmptyPrompt(String),
    #[error("empty text in embed batch at index {0}")]
    EmptyText(usize),
    #[error("[{tag}] backend failed after {attempts} attempt(s): {source}")]
    Backend {
        tag: String,
        attempts: u32,
        #[source]
        source: BackendError,
    },
    #[error("unparseable verdict (rule {rule:?}): {raw:?}")]
    UnparseableVerdict { rule: ParseRule, raw: String },
    #[error("backend returned {got} embeddings for {want} texts")]
    EmbeddingCount { want: usize, got: usize },
    #[error("audit log {path}: {reason}")]
    Audit { path: String, reason: String },
}

impl GatewayError {
    pub fn is_unparseable(&self) -> bool {
        matches!(self, GatewayError::UnparseableVerdict { .. })
    }
}

/// One chat completion request.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop: Option<Vec<String>>,
    /// Stage name used for audit logging and mock behavior selection.
    pub request_tag: String,
}

impl ChatRequest {
    pub fn new(prompt: impl Into<String>, tag: impl Into<String>) -> Self {
        ChatRequest {
            prompt: prompt.into(),
            temperature: 0.7,
            max_tokens: 512,
            stop: None,
            request_tag: tag.into(),
        }
    }

    pub fn with_decoding(mut self, temperature: f64, max_tokens: u32) -> Self {
        self.temperature = temperature;
        self.max_tokens = max_tokens;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseRule {
    /// First '0' or '1' character in the reply.
    FirstDigit,
    /// First digit in 1..=5.
    Scale1To5,
}

/// A parsed judge reply; the raw text is retained for auditing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub raw_text: String,
    pub value: u8,
    pub parse_rule: ParseRule,
}

/// First '0'/'1' in the reply, if any.
pub fn parse_binary_verdict(raw: &str) -> Option<u8> {
    raw.chars().find_map(|c| match c {
        '0' => Some(0),
        '1' => Some(1),
        _ => None,
    })
}

/// First digit 1..=5 in the reply, if any.
pub fn parse_scale_verdict(raw: &str) -> Option<u8> {
    raw.chars().find_map(|c| match c {
        '1'..='5' => Some(c as u8 - b'0'),
        _ => None,
    })
}

/// Connection settings for the OpenAI-compatible backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub model_name: String,
    pub embed_model_name: String,
    pub max_concurrent: usize,
    pub retry_limit: u32,
    pub timeout_s: f64,
    /// Initial backoff; doubles per retry.
    pub backoff_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            base_url: "http://localhost:8000".to_string(),
            api_key_env: "FANNO_API_KEY".to_string(),
            model_name: "mistral-7b-instruct-v0.2".to_string(),
            embed_model_name: "paraphrase-minilm-l6-v2".to_string(),
            max_concurrent: 4,
            retry_limit: 3,
            timeout_s: 60.0,
            backoff_ms: 250,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_concurrent < 1 {
            return Err("max_concurrent must be >= 1".to_string());
        }
        if self.timeout_s <= 0.0 {
            return Err("timeout_s must be positive".to_string());
        }
        Ok(())
    }
}

/// Decoding parameters used when the gateway issues judge calls itself.
#[derive(Debug, Clone, Copy)]
pub struct JudgeDecoding {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for JudgeDecoding {
    fn default() -> Self {
        JudgeDecoding { temperature: 0.0, max_tokens: 8 }
    }
}

/// Decoding parameters for generation calls (seeds, augmentation,
/// responses). The defaults are pipeline choices, not reference values.
#[derive(Debug, Clone, Copy)]
pub struct GenDecoding {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenDecoding {
    fn default() -> Self {
        GenDecoding { temperature: 0.7, max_tokens: 512 }
    }
}

/// Raw model access implemented by each backend.
pub trait Backend: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError>;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
    fn name(&self) -> &'static str;
}

#[derive(Debug, Default)]
struct Counters {
    chat_calls: AtomicU64,
    embed_calls: AtomicU64,
    embed_cache_hits: AtomicU64,
    retries: AtomicU64,
    failures: AtomicU64,
}

/// Point-in-time gateway counters.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GatewaySnapshot {
    pub chat_calls: u64,
    pub embed_calls: u64,
    pub embed_cache_hits: u64,
    pub retries: u64,
    pub failures: u64,
}

#[derive(Serialize)]
struct AuditRecord<'a> {
    ts_ms: u128,
    request_tag: &'a str,
    prompt_hash: &'a str,
    latency_ms: u128,
    retries: u32,
    outcome: &'a str,
}

/// Counting semaphore bounding in-flight backend requests.
struct Limiter {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(max: usize) -> Self {
        Limiter { permits: Mutex::new(max), cv: Condvar::new() }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cv.wait(permits).unwrap();
        }
        *permits -= 1;
        LimiterGuard { limiter: self }
    }

    fn release(&self) {
        let mut permits = self.permits.lock().unwrap();
        *permits += 1;
        self.cv.notify_one();
    }
}

struct LimiterGuard<'a> {
    limiter: &'a Limiter,
}

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        self.limiter.release();
    }
}

/// Thread-safe client wrapping a [`Backend`] with retries, a concurrency
/// cap, embedding caching, and audit logging.
pub struct LlmGateway {
    backend: Box<dyn Backend>,
    retry_limit: u32,
    backoff: Duration,
    judge: JudgeDecoding,
    limiter: Limiter,
    embed_cache: Mutex<HashMap<String, Vec<f64>>>,
    disk_cache: Option<Mutex<(PathBuf, File)>>,
    audit: Option<Mutex<File>>,
    counters: Counters,
}

impl LlmGateway {
    pub fn new(backend: Box<dyn Backend>, cfg: &BackendConfig) -> Self {
        LlmGateway {
            backend,
            retry_limit: cfg.retry_limit,
            backoff: Duration::from_millis(cfg.backoff_ms),
            judge: JudgeDecoding::default(),
            limiter: Limiter::new(cfg.max_concurrent.max(1)),
            embed_cache: Mutex::new(HashMap::new()),
            disk_cache: None,
            audit: None,
            counters: Counters::default(),
        }
    }

    pub fn with_judge_decoding(mut self, judge: JudgeDecoding) -> Self {
        self.judge = judge;
        self
    }

    /// Append audit records to a JSONL file.
    pub fn with_audit_log(mut self, path: &Path) -> Result<Self, GatewayError> {
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| {
            GatewayError::Audit { path: path.display().to_string(), reason: e.to_string() }
        })?;
        self.audit = Some(Mutex::new(file));
        Ok(self)
    }

    /// Persist embeddings across runs. Existing entries are loaded into
    /// the in-memory cache; new ones are appended as they are computed.
    pub fn with_disk_embed_cache(mut self, path: &Path) -> Result<Self, GatewayError> {
        let as_err = |reason: String| GatewayError::Audit {
            path: path.display().to_string(),
            reason,
        };
        if path.exists() {
            let (_, entries) = crate::embedding::read_embedding_cache(path)
                .map_err(|e| as_err(e.to_string()))?;
            let mut cache = self.embed_cache.lock().unwrap();
            for (key, vec) in entries {
                cache.insert(key, vec.0);
            }
        } else {
            // fresh file needs its dim header; written lazily on first miss
            let _ = File::create(path).map_err(|e| as_err(e.to_string()))?;
        }
        let file = OpenOptions::new().append(true).open(path).map_err(|e| as_err(e.to_string()))?;
        self.disk_cache = Some(Mutex::new((path.to_path_buf(), file)));
        Ok(self)
    }

    pub fn backend_name(&self) -> &'static str {
        self.backend.name()
    }

    pub fn snapshot(&self) -> GatewaySnapshot {
        GatewaySnapshot {
            chat_calls: self.counters.chat_calls.load(Ordering::Relaxed),
            embed_calls: self.counters.embed_calls.load(Ordering::Relaxed),
            embed_cache_hits: self.counters.embed_cache_hits.load(Ordering::Relaxed),
            retries: self.counters.retries.load(Ordering::Relaxed),
            failures: self.counters.failures.load(Ordering::Relaxed),
        }
    }

    /// Chat completion with retry on transient failures. 4xx responses
    /// fail immediately; transport errors and 5xx retry with exponential
    /// backoff up to the configured limit.
    pub fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        if req.prompt.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt(req.request_tag.clone()));
        }
        self.counters.chat_calls.fetch_add(1, Ordering::Relaxed);
        let prompt_hash = sha256_hex(req.prompt.as_bytes());
        let started = Instant::now();
        let mut attempt: u32 = 0;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                self.backend.chat(req)
            };
            match result {
                Ok(text) => {
                    self.write_audit(&req.request_tag, &prompt_hash, started, attempt, "ok");
                    return Ok(text);
                }
                Err(e) if e.retryable() && attempt < self.retry_limit => {
                    attempt += 1;
                    self.counters.retries.fetch_add(1, Ordering::Relaxed);
                    std::thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
                }
                Err(e) => {
                    self.counters.failures.fetch_add(1, Ordering::Relaxed);
                    self.write_audit(&req.request_tag, &prompt_hash, started, attempt, "error");
                    return Err(GatewayError::Backend {
                        tag: req.request_tag.clone(),
                        attempts: attempt + 1,
                        source: e,
                    });
                }
            }
        }
    }

    /// Embed texts (order preserved), consulting the content-hash cache
    /// first. Every text must be non-empty.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        for (i, t) in texts.iter().enumerate() {
            if t.trim().is_empty() {
                return Err(GatewayError::EmptyText(i));
            }
        }
        let keys: Vec<String> = texts.iter().map(|t| sha256_hex(t.as_bytes())).collect();
        let mut missing: Vec<usize> = Vec::new();
        {
            let cache = self.embed_cache.lock().unwrap();
            for (i, key) in keys.iter().enumerate() {
                if cache.contains_key(key) {
                    self.counters.embed_cache_hits.fetch_add(1, Ordering::Relaxed);
                } else if !missing.iter().any(|&m| keys[m] == *key) {
                    missing.push(i);
                }
            }
        }
        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let vectors = self.embed_with_retry(&batch)?;
            if vectors.len() != batch.len() {
                return Err(GatewayError::EmbeddingCount { want: batch.len(), got: vectors.len() });
            }
            let mut cache = self.embed_cache.lock().unwrap();
            for (&i, vec) in missing.iter().zip(vectors.into_iter()) {
                self.append_disk_cache(&keys[i], &vec);
                cache.insert(keys[i].clone(), vec);
            }
        }
        let cache = self.embed_cache.lock().unwrap();
        Ok(keys
            .iter()
            .map(|k| EmbeddingVector(cache.get(k).expect("filled above").clone()))
            .collect())
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        Ok(self.embed(&[text.to_string()])?.remove(0))
    }

    fn embed_with_retry(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        self.counters.embed_calls.fetch_add(1, Ordering::Relaxed);
        let batch_hash = sha256_hex(texts.join("\u{1f}").as_bytes());
        let started = Instant::now();
        let mut attempt: u32 = 0;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                self.backend.embed(texts)
            };
            match result {
                Ok(vectors) => {
                    self.write_audit("embed", &batch_hash, started, attempt, "ok");
                    return Ok(vectors);
                }
                Err(e) if e.retryable() && attempt < self.retry_limit => {
                    attempt += 1;
                    self.counters.retries.fetch_add(1, Ordering::Relaxed);
                    std::thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
                }
                Err(e) => {
                    self.counters.failures.fetch_add(1, Ordering::Relaxed);
                    self.write_audit("embed", &batch_hash, started, attempt, "error");
                    return Err(GatewayError::Backend {
                        tag: "embed".to_string(),
                        attempts: attempt + 1,
                        source: e,
                    });
                }
            }
        }
    }

    /// Run a rendered filter prompt and parse the first '0'/'1'.
    pub fn binary_judge(&self, prompt: &str, tag: &str) -> Result<JudgeVerdict, GatewayError> {
        let req = ChatRequest::new(prompt, tag)
            .with_decoding(self.judge.temperature, self.judge.max_tokens);
        let raw = self.chat(&req)?;
        match parse_binary_verdict(&raw) {
            Some(value) => Ok(JudgeVerdict { raw_text: raw, value, parse_rule: ParseRule::FirstDigit }),
            None => Err(GatewayError::UnparseableVerdict { rule: ParseRule::FirstDigit, raw }),
        }
    }

    /// Run a rendered scoring prompt and parse the first digit 1..=5.
    pub fn score_judge(&self, prompt: &str, tag: &str) -> Result<JudgeVerdict, GatewayError> {
        let req = ChatRequest::new(prompt, tag)
            .with_decoding(self.judge.temperature, self.judge.max_tokens);
        let raw = self.chat(&req)?;
        match parse_scale_verdict(&raw) {
            Some(value) => Ok(JudgeVerdict { raw_text: raw, value, parse_rule: ParseRule::Scale1To5 }),
            None => Err(GatewayError::UnparseableVerdict { rule: ParseRule::Scale1To5, raw }),
        }
    }

    fn append_disk_cache(&self, key: &str, vector: &[f64]) {
        if let Some(disk) = &self.disk_cache {
            let mut guard = disk.lock().unwrap();
            let needs_header = guard.1.metadata().map(|m| m.len() == 0).unwrap_or(false);
            let mut line = String::new();
            if needs_header {
                line.push_str(&format!("{{\"dim\":{}}}\n", vector.len()));
            }
            line.push_str(
                &serde_json::json!({ "key": key, "vector": vector }).to_string(),
            );
            line.push('\n');
            let _ = guard.1.write_all(line.as_bytes());
        }
    }

    fn write_audit(&self, tag: &str, prompt_hash: &str, started: Instant, retries: u32, outcome: &str) {
        if let Some(audit) = &self.audit {
            let record = AuditRecord {
                ts_ms: SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default().as_millis(),
                request_tag: tag,
                prompt_hash,
                latency_ms: started.elapsed().as_millis(),
                retries,
                outcome,
            };
            let mut file = audit.lock().unwrap();
            let _ = writeln!(file, "{}", serde_json::to_string(&record).unwrap());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::mock::{MockBackend, MockConfig};
    use super::*;

    fn mock_gateway() -> LlmGateway {
        LlmGateway::new(Box::new(MockBackend::new(MockConfig::default())), &BackendConfig::default())
    }

    #[test]
    fn binary_verdict_parses_first_digit() {
        assert_eq!(parse_binary_verdict("1"), Some(1));
        assert_eq!(parse_binary_verdict("0 (Reason: recent)"), Some(0));
        assert_eq!(parse_binary_verdict("Answer: 1 (Reason: historical)"), Some(1));
        assert_eq!(parse_binary_verdict("maybe"), None);
    }

    #[test]
    fn scale_verdict_parses_first_digit_in_range() {
        assert_eq!(parse_scale_verdict("5"), Some(5));
        assert_eq!(parse_scale_verdict("Score: 3"), Some(3));
        assert_eq!(parse_scale_verdict("0 out of zero"), None);
        assert_eq!(parse_scale_verdict("zero"), None);
    }

    #[test]
    fn empty_prompt_is_rejected() {
        let gw = mock_gateway();
        let req = ChatRequest::new("  ", "seed.generate");
        assert!(matches!(gw.chat(&req), Err(GatewayError::EmptyPrompt(_))));
    }

    #[test]
    fn canned_reply_is_keyed_by_prompt_sha() {
        let mut backend = MockBackend::new(MockConfig::default());
        backend.insert_canned("filter.temporal", "judge this", "0 (Reason: recent)");
        let gw = LlmGateway::new(Box::new(backend), &BackendConfig::default());
        let verdict = gw.binary_judge("judge this", "filter.temporal").unwrap();
        assert_eq!(verdict.value, 0);
        assert_eq!(verdict.raw_text, "0 (Reason: recent)");
    }

    #[test]
    fn unparseable_verdict_is_surfaced() {
        let mut backend = MockBackend::new(MockConfig::default());
        backend.insert_canned("filter.logic", "judge this", "maybe so");
        let gw = LlmGateway::new(Box::new(backend), &BackendConfig::default());
        let err = gw.binary_judge("judge this", "filter.logic").unwrap_err();
        assert!(err.is_unparseable());
    }

    #[test]
    fn embed_is_cached_and_deterministic() {
        let gw = mock_gateway();
        let texts = vec!["same text".to_string(), "same text".to_string(), "other".to_string()];
        let out = gw.embed(&texts).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0], out[1]);
        assert_ne!(out[0], out[2]);
        // duplicate plus repeat call are cache hits; no extra backend call
        let before = gw.snapshot().embed_calls;
        let again = gw.embed(&texts).unwrap();
        assert_eq!(out, again);
        assert_eq!(gw.snapshot().embed_calls, before);
    }

    #[test]
    fn embed_rejects_empty_text_and_empty_list_is_ok() {
        let gw = mock_gateway();
        assert!(gw.embed(&[]).unwrap().is_empty());
        let err = gw.embed(&["".to_string()]).unwrap_err();
        assert!(matches!(err, GatewayError::EmptyText(0)));
    }

    #[test]
    fn mock_chat_is_reproducible_across_gateways() {
        let a = mock_gateway();
        let b = mock_gateway();
        let req = ChatRequest::new("generate something", "seed.generate");
        assert_eq!(a.chat(&req).unwrap(), b.chat(&req).unwrap());
    }
}
