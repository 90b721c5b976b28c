//! Deterministic offline backend.
//!
//! Replies are a pure function of (seed, request tag, request content):
//! the same request always gets the same reply, within a run and across
//! runs, processes, and machines. Canned replies keyed by
//! `(request_tag, sha256(prompt))` take precedence; otherwise the tag
//! prefix picks a behavior:
//!
//! - `prescreen.*` — binary verdict, '1' (content flagged) with
//!   probability `prescreen_flag_rate`
//! - `filter.*` — binary verdict, '1' (instruction good) with
//!   probability `filter_pass_rate`
//! - `respond.select`, `judge.*`, `stats.*` — a uniform score 1..=5
//! - anything else — a pseudo-random sentence whose word count is drawn
//!   from `[sentence_words_min, sentence_words_max]`
//!
//! Embeddings hash the text into an RNG seed and draw `embed_dim`
//! uniform values, so equal texts get equal vectors.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, ChatRequest};
use crate::hash::sha256_hex;

const WORDS: &[&str] = &[
    "amber", "basalt", "cedar", "delta", "ember", "fjord", "granite", "harbor", "indigo",
    "juniper", "kelp", "lagoon", "marble", "nectar", "onyx", "prairie", "quartz", "russet",
    "sienna", "tundra", "umber", "velvet", "willow", "xenon", "yarrow", "zephyr", "anchor",
    "beacon", "compass", "drift", "estuary", "flint", "glacier", "horizon", "isthmus", "jetty",
    "knoll", "lattice", "meridian", "nimbus", "orchard", "pylon", "quarry", "ridge", "summit",
    "terrace", "updraft", "vista",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub seed: u64,
    pub embed_dim: usize,
    /// Probability a `prescreen.*` judge answers '1' (document flagged).
    pub prescreen_flag_rate: f64,
    /// Probability a `filter.*` judge answers '1' (instruction kept).
    pub filter_pass_rate: f64,
    pub sentence_words_min: usize,
    pub sentence_words_max: usize,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            seed: 42,
            embed_dim: 32,
            prescreen_flag_rate: 0.1,
            filter_pass_rate: 0.85,
            sentence_words_min: 6,
            sentence_words_max: 28,
        }
    }
}

pub struct MockBackend {
    cfg: MockConfig,
    canned: HashMap<(String, String), String>,
}

impl MockBackend {
    pub fn new(cfg: MockConfig) -> Self {
        MockBackend { cfg, canned: HashMap::new() }
    }

    /// Fix the reply for a specific (tag, prompt) pair.
    pub fn insert_canned(&mut self, tag: &str, prompt: &str, reply: &str) {
        self.insert_canned_hash(tag, &sha256_hex(prompt.as_bytes()), reply);
    }

    pub fn insert_canned_hash(&mut self, tag: &str, prompt_sha: &str, reply: &str) {
        self.canned.insert((tag.to_string(), prompt_sha.to_string()), reply.to_string());
    }

    fn rng_for(&self, parts: &[&str]) -> ChaCha20Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.cfg.seed.to_le_bytes());
        for part in parts {
            hasher.update([0x1f]);
            hasher.update(part.as_bytes());
        }
        let digest = hasher.finalize();
        ChaCha20Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().unwrap()))
    }

    fn sentence(&self, rng: &mut ChaCha20Rng) -> String {
        let lo = self.cfg.sentence_words_min.max(1);
        let hi = self.cfg.sentence_words_max.max(lo);
        let count = rng.random_range(lo..=hi);
        let mut words: Vec<&str> = Vec::with_capacity(count);
        for _ in 0..count {
            words.push(WORDS[rng.random_range(0..WORDS.len())]);
        }
        format!("{}?", words.join(" "))
    }
}

impl Backend for MockBackend {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let prompt_sha = sha256_hex(req.prompt.as_bytes());
        if let Some(reply) = self.canned.get(&(req.request_tag.clone(), prompt_sha.clone())) {
            return Ok(reply.clone());
        }
        let mut rng = self.rng_for(&["chat", &req.request_tag, &prompt_sha]);
        let tag = req.request_tag.as_str();
        let reply = if tag.starts_with("prescreen.") {
            if rng.random::<f64>() < self.cfg.prescreen_flag_rate { "1" } else { "0" }.to_string()
        } else if tag.starts_with("filter.") {
            if rng.random::<f64>() < self.cfg.filter_pass_rate { "1" } else { "0" }.to_string()
        } else if tag == "respond.select" || tag.starts_with("judge.") || tag.starts_with("stats.") {
            rng.random_range(1..=5u8).to_string()
        } else {
            self.sentence(&mut rng)
        };
        Ok(reply)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(texts
            .iter()
            .map(|text| {
                let text_sha = sha256_hex(text.as_bytes());
                let mut rng = self.rng_for(&["embed", &text_sha]);
                (0..self.cfg.embed_dim).map(|_| rng.random_range(-1.0..1.0)).collect()
            })
            .collect())
    }

    fn name(&self) -> &'static str {
        "mock"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn backend() -> MockBackend {
        MockBackend::new(MockConfig::default())
    }

    #[test]
    fn replies_depend_only_on_seed_tag_and_prompt() {
        let a = backend();
        let b = backend();
        let req = ChatRequest::new("some prompt", "augment.generate");
        assert_eq!(a.chat(&req).unwrap(), b.chat(&req).unwrap());
        let other = MockBackend::new(MockConfig { seed: 7, ..MockConfig::default() });
        assert_ne!(a.chat(&req).unwrap(), other.chat(&req).unwrap());
    }

    #[test]
    fn verdict_tags_produce_digits() {
        let b = backend();
        for i in 0..50 {
            let req = ChatRequest::new(format!("doc {i}"), "prescreen.useless");
            let reply = b.chat(&req).unwrap();
            assert!(reply == "0" || reply == "1", "unexpected reply {reply:?}");
            let req = ChatRequest::new(format!("score {i}"), "respond.select");
            let reply = b.chat(&req).unwrap();
            let v: u8 = reply.parse().unwrap();
            assert!((1..=5).contains(&v));
        }
    }

    #[test]
    fn sentences_respect_word_bounds() {
        let b = MockBackend::new(MockConfig {
            sentence_words_min: 4,
            sentence_words_max: 9,
            ..MockConfig::default()
        });
        for i in 0..40 {
            let req = ChatRequest::new(format!("gen {i}"), "seed.generate");
            let reply = b.chat(&req).unwrap();
            let wc = reply.split_whitespace().count();
            assert!((4..=9).contains(&wc), "word count {wc} out of range: {reply}");
        }
    }

    #[test]
    fn embeddings_are_content_keyed() {
        let b = backend();
        let out = b
            .embed(&["alpha".to_string(), "alpha".to_string(), "beta".to_string()])
            .unwrap();
        assert_eq!(out[0], out[1]);
        assert_ne!(out[0], out[2]);
        assert_eq!(out[0].len(), MockConfig::default().embed_dim);
    }
}
