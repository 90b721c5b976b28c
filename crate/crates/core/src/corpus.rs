//! Corpus ingestion: load raw text, segment it into documents, and apply
//! the cheap mechanical filters (exact dedup, length bounds) that run
//! before any model-based screening.
//!
//! All operations here are pure over their inputs and deterministic, so
//! identical inputs and policy produce byte-identical document lists.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::hash::{content_id, normalize_for_hash};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("unreadable path {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid segmentation policy: {0}")]
    InvalidPolicy(String),
    #[error("unsupported corpus format {0:?} for path {1}")]
    UnsupportedFormat(SourceFormat, String),
}

/// One unit of raw input text, before segmentation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawSource {
    /// Unique within a run (file stem plus line number, or file name).
    pub source_id: String,
    pub text: String,
    /// Where the text came from: a file path or a URL tag.
    pub origin: String,
}

/// A segmented text unit flowing through the filter stages.
///
/// `doc_id` is a hash of the normalized text, so exact duplicates collide
/// regardless of case or whitespace differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub word_count: usize,
    pub source_id: String,
    /// False when segmentation could not reach the minimum word count.
    #[serde(skip_serializing, default = "default_kept")]
    pub kept: bool,
}

fn default_kept() -> bool {
    true
}

impl Document {
    pub fn from_text(text: String, source_id: &str) -> Self {
        let word_count = word_count(&text);
        Document {
            doc_id: content_id(&normalize_for_hash(&text)),
            text,
            word_count,
            source_id: source_id.to_string(),
            kept: true,
        }
    }
}

/// Whitespace-token count; the pipeline's only notion of text length.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Paragraph,
    SlidingWindow,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentationPolicy {
    pub min_words: usize,
    pub max_words: usize,
    pub split_on: SplitMode,
    /// Window size in words; only used by `SlidingWindow`.
    pub window_words: usize,
}

impl Default for SegmentationPolicy {
    fn default() -> Self {
        SegmentationPolicy {
            min_words: 64,
            max_words: 1024,
            split_on: SplitMode::Paragraph,
            window_words: 256,
        }
    }
}

impl SegmentationPolicy {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.min_words == 0 || self.min_words >= self.max_words {
            return Err(CorpusError::InvalidPolicy(format!(
                "need 0 < min_words < max_words, got min={} max={}",
                self.min_words, self.max_words
            )));
        }
        if self.split_on == SplitMode::SlidingWindow
            && !(self.min_words <= self.window_words && self.window_words <= self.max_words)
        {
            return Err(CorpusError::InvalidPolicy(format!(
                "window_words {} outside [min_words, max_words]",
                self.window_words
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    Jsonl,
    PlainTextDir,
}

/// A skipped input line, reported but not fatal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedLine {
    pub path: String,
    pub line: usize,
    pub reason: String,
}

/// Result of loading a corpus: sources in stable order plus skip reports.
#[derive(Debug, Default)]
pub struct LoadedSources {
    pub sources: Vec<RawSource>,
    pub skipped: Vec<SkippedLine>,
}

/// Load raw sources from a JSONL file (one object per line, field
/// `content` or `text`) or from a directory of plain-text files read in
/// lexicographic order. Malformed JSONL lines are skipped and surfaced
/// with their line number.
pub fn load_sources(path: &Path, format: SourceFormat) -> Result<LoadedSources, CorpusError> {
    match format {
        SourceFormat::Jsonl => load_jsonl(path),
        SourceFormat::PlainTextDir => load_text_dir(path),
    }
}

fn load_jsonl(path: &Path) -> Result<LoadedSources, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string());
    let mut out = LoadedSources::default();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Unreadable {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let skip = |reason: String| SkippedLine {
            path: path.display().to_string(),
            line: line_no,
            reason,
        };
        match serde_json::from_str::<serde_json::Value>(&line) {
            Ok(value) => {
                let text = value
                    .get("content")
                    .or_else(|| value.get("text"))
                    .and_then(|v| v.as_str());
                match text {
                    Some(t) if !t.trim().is_empty() => {
                        let origin = value
                            .get("url")
                            .or_else(|| value.get("source"))
                            .and_then(|v| v.as_str())
                            .unwrap_or(&path.display().to_string())
                            .to_string();
                        out.sources.push(RawSource {
                            source_id: format!("{stem}#L{line_no}"),
                            text: t.to_string(),
                            origin,
                        });
                    }
                    Some(_) => out.skipped.push(skip("empty content".to_string())),
                    None => out
                        .skipped
                        .push(skip("missing 'content'/'text' field".to_string())),
                }
            }
            Err(e) => out.skipped.push(skip(format!("malformed JSON: {e}"))),
        }
    }
    Ok(out)
}

fn load_text_dir(path: &Path) -> Result<LoadedSources, CorpusError> {
    let entries = fs::read_dir(path).map_err(|source| CorpusError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    let mut files: Vec<_> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut out = LoadedSources::default();
    for file in files {
        let name = file
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        match fs::read_to_string(&file) {
            Ok(text) if !text.trim().is_empty() => out.sources.push(RawSource {
                source_id: name,
                text,
                origin: file.display().to_string(),
            }),
            Ok(_) => out.skipped.push(SkippedLine {
                path: file.display().to_string(),
                line: 0,
                reason: "empty file".to_string(),
            }),
            Err(e) => out.skipped.push(SkippedLine {
                path: file.display().to_string(),
                line: 0,
                reason: format!("unreadable: {e}"),
            }),
        }
    }
    Ok(out)
}

/// Split a source into documents.
///
/// Paragraph mode splits on blank lines, merges adjacent paragraphs until
/// each chunk reaches `min_words`, and hard-splits oversized paragraphs at
/// word boundaries so no chunk exceeds `max_words`. The concatenation of
/// chunk texts reproduces the source text modulo boundary whitespace.
/// Chunks that still end below `min_words` are emitted with `kept=false`.
pub fn segment(source: &RawSource, policy: &SegmentationPolicy) -> Result<Vec<Document>, CorpusError> {
    policy.validate()?;
    let units = match policy.split_on {
        SplitMode::Paragraph => paragraph_units(&source.text, policy.max_words),
        SplitMode::SlidingWindow => window_units(&source.text, policy.window_words),
    };

    let mut docs = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let mut current_words = 0usize;

    let mut flush = |parts: &mut Vec<String>, words: &mut usize, docs: &mut Vec<Document>| {
        if parts.is_empty() {
            return;
        }
        let text = parts.join("\n\n");
        let mut doc = Document::from_text(text, &source.source_id);
        doc.kept = doc.word_count >= policy.min_words;
        docs.push(doc);
        parts.clear();
        *words = 0;
    };

    for unit in units {
        let unit_words = word_count(&unit);
        if current_words > 0 && current_words + unit_words > policy.max_words {
            flush(&mut current, &mut current_words, &mut docs);
        }
        current_words += unit_words;
        current.push(unit);
        if current_words >= policy.min_words {
            flush(&mut current, &mut current_words, &mut docs);
        }
    }
    flush(&mut current, &mut current_words, &mut docs);
    Ok(docs)
}

/// Paragraphs split on blank lines; any paragraph longer than `max_words`
/// is pre-split into word-boundary pieces of at most `max_words`.
fn paragraph_units(text: &str, max_words: usize) -> Vec<String> {
    let mut units = Vec::new();
    for para in split_paragraphs(text) {
        let words: Vec<&str> = para.split_whitespace().collect();
        if words.len() > max_words {
            for chunk in words.chunks(max_words) {
                units.push(chunk.join(" "));
            }
        } else {
            units.push(para);
        }
    }
    units
}

fn window_units(text: &str, window_words: usize) -> Vec<String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    words
        .chunks(window_words.max(1))
        .map(|c| c.join(" "))
        .collect()
}

fn split_paragraphs(text: &str) -> Vec<String> {
    let mut paras = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                paras.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        paras.push(current.join("\n"));
    }
    paras
}

/// Drop later occurrences of documents whose normalized text hash was
/// already seen; relative order is preserved.
pub fn exact_dedup(docs: Vec<Document>) -> Vec<Document> {
    let mut seen = HashSet::new();
    docs.into_iter()
        .filter(|d| seen.insert(d.doc_id.clone()))
        .collect()
}

/// Keep exactly the documents with `min_words <= word_count <= max_words`.
pub fn length_filter(docs: Vec<Document>, min_words: usize, max_words: usize) -> Vec<Document> {
    docs.into_iter()
        .filter(|d| d.word_count >= min_words && d.word_count <= max_words)
        .collect()
}
