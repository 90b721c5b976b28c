//! Seed instruction generation.
//!
//! Runs the LLM pre-screen cascade over diversity-selected documents,
//! then builds the initial instruction pool by sampling documents and
//! issuing each one's 80-cell tag grid, keeping candidates that pass all
//! three instruction filters.
//!
//! Unparseable judge verdicts fail closed everywhere in this module:
//! losing a candidate is cheaper than admitting junk.

use std::collections::{BTreeMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{word_count, Document};
use crate::embedding::EmbeddingVector;
use crate::gateway::{ChatRequest, GatewayError, GenDecoding, LlmGateway};
use crate::hash::content_id;
use crate::prompts::{seed_prompt_grid, PromptError, PromptLibrary, TagTriple, TemplateId};

#[derive(Debug, thiserror::Error)]
pub enum SeedError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("no documents available for seed generation")]
    EmptyDocs,
    #[error("sample_size {want} exceeds available documents {have}")]
    SampleTooLarge { want: usize, have: usize },
}

/// A generated instruction with provenance and bookkeeping fields.
///
/// Seed instructions (iteration 0) carry the tags of the grid cell that
/// produced them; augmented instructions carry none.
#[derive(Debug, Clone, PartialEq)]
pub struct Instruction {
    pub instr_id: String,
    pub text: String,
    pub origin_doc_id: String,
    pub tags: Option<TagTriple>,
    pub iteration: u32,
    pub word_count: usize,
    pub embedding: Option<EmbeddingVector>,
}

impl Instruction {
    pub fn new(
        text: String,
        origin_doc_id: impl Into<String>,
        tags: Option<TagTriple>,
        iteration: u32,
    ) -> Self {
        let word_count = word_count(&text);
        Instruction {
            instr_id: content_id(&text),
            text,
            origin_doc_id: origin_doc_id.into(),
            tags,
            iteration,
            word_count,
            embedding: None,
        }
    }
}

/// On-disk form of an [`Instruction`]; word count is recomputed on load
/// and embeddings are cached separately.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub instr_id: String,
    pub text: String,
    pub origin_doc_id: String,
    pub tags: Option<TagTriple>,
    pub iteration: u32,
}

impl From<&Instruction> for InstructionRecord {
    fn from(i: &Instruction) -> Self {
        InstructionRecord {
            instr_id: i.instr_id.clone(),
            text: i.text.clone(),
            origin_doc_id: i.origin_doc_id.clone(),
            tags: i.tags.clone(),
            iteration: i.iteration,
        }
    }
}

impl From<InstructionRecord> for Instruction {
    fn from(r: InstructionRecord) -> Self {
        let word_count = word_count(&r.text);
        Instruction {
            instr_id: r.instr_id,
            text: r.text,
            origin_doc_id: r.origin_doc_id,
            tags: r.tags,
            iteration: r.iteration,
            word_count,
            embedding: None,
        }
    }
}

/// Audit record for one judge call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterOutcome {
    /// doc_id for pre-screen filters, instr_id for instruction filters.
    pub subject_id: String,
    pub filter_id: TemplateId,
    /// None when the reply could not be parsed (fails closed).
    pub verdict: Option<u8>,
    pub raw_reply: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterDecision {
    Kept,
    Dropped(TemplateId),
    Unparseable(TemplateId),
}

pub struct FilterRun {
    pub decision: FilterDecision,
    pub outcomes: Vec<FilterOutcome>,
}

/// Pre-screen cascade order and polarity come from the template manifest.
const PRESCREEN_CASCADE: &[(TemplateId, &str, &str)] = &[
    (TemplateId::PrescreenUseless, "doc", "prescreen.useless"),
    (TemplateId::PrescreenPrivacy, "doc", "prescreen.privacy"),
    (TemplateId::PrescreenAd, "text", "prescreen.ad"),
];

const INSTRUCTION_FILTERS: &[(TemplateId, &str)] = &[
    (TemplateId::InstrFilterTemporal, "filter.temporal"),
    (TemplateId::InstrFilterPrivacy, "filter.privacy"),
    (TemplateId::InstrFilterLogic, "filter.logic"),
];

pub struct PrescreenReport {
    pub survivors: Vec<Document>,
    pub audit: Vec<FilterOutcome>,
    pub drops: BTreeMap<String, usize>,
}

/// Run the useless -> privacy -> advertisement cascade over documents.
/// A document survives only if every judge answers its "keep" verdict;
/// the cascade short-circuits, so later prompts are never sent for a
/// document an earlier filter dropped.
pub fn prescreen_documents(
    gateway: &LlmGateway,
    library: &PromptLibrary,
    docs: &[Document],
) -> Result<PrescreenReport, SeedError> {
    let mut report = PrescreenReport {
        survivors: Vec::new(),
        audit: Vec::new(),
        drops: BTreeMap::new(),
    };
    'docs: for doc in docs {
        for (template, slot, tag) in PRESCREEN_CASCADE {
            let rendered = library.render(*template, &[(*slot, doc.text.as_str())])?;
            let good = library.good_verdict(*template).expect("prescreen templates have polarity");
            match gateway.binary_judge(&rendered.text, tag) {
                Ok(verdict) => {
                    report.audit.push(FilterOutcome {
                        subject_id: doc.doc_id.clone(),
                        filter_id: *template,
                        verdict: Some(verdict.value),
                        raw_reply: verdict.raw_text,
                    });
                    if verdict.value != good {
                        *report.drops.entry(format!("prescreen_{}", short_name(*template))).or_insert(0) += 1;
                        continue 'docs;
                    }
                }
                Err(e) if e.is_unparseable() => {
                    let raw = match &e {
                        GatewayError::UnparseableVerdict { raw, .. } => raw.clone(),
                        _ => unreachable!(),
                    };
                    report.audit.push(FilterOutcome {
                        subject_id: doc.doc_id.clone(),
                        filter_id: *template,
                        verdict: None,
                        raw_reply: raw,
                    });
                    *report.drops.entry("prescreen_unparseable".to_string()).or_insert(0) += 1;
                    continue 'docs;
                }
                Err(e) => return Err(e.into()),
            }
        }
        report.survivors.push(doc.clone());
    }
    Ok(report)
}

fn short_name(template: TemplateId) -> &'static str {
    match template {
        TemplateId::PrescreenUseless => "useless",
        TemplateId::PrescreenPrivacy => "privacy",
        TemplateId::PrescreenAd => "ad",
        TemplateId::InstrFilterTemporal => "temporal",
        TemplateId::InstrFilterPrivacy => "privacy",
        TemplateId::InstrFilterLogic => "logic",
        other => other.as_str(),
    }
}

/// Run the three instruction filters conjunctively with short-circuiting.
/// Unparseable verdicts fail closed.
pub fn filter_instruction(
    gateway: &LlmGateway,
    library: &PromptLibrary,
    text: &str,
) -> Result<FilterRun, GatewayError> {
    let mut outcomes = Vec::new();
    let subject = content_id(text);
    for (template, tag) in INSTRUCTION_FILTERS {
        let rendered = library
            .render(*template, &[("instruction", text)])
            .expect("instruction filters take a single binding");
        let good = library.good_verdict(*template).expect("filters have polarity");
        match gateway.binary_judge(&rendered.text, tag) {
            Ok(verdict) => {
                let value = verdict.value;
                outcomes.push(FilterOutcome {
                    subject_id: subject.clone(),
                    filter_id: *template,
                    verdict: Some(value),
                    raw_reply: verdict.raw_text,
                });
                if value != good {
                    return Ok(FilterRun { decision: FilterDecision::Dropped(*template), outcomes });
                }
            }
            Err(e) if e.is_unparseable() => {
                let raw = match &e {
                    GatewayError::UnparseableVerdict { raw, .. } => raw.clone(),
                    _ => unreachable!(),
                };
                outcomes.push(FilterOutcome {
                    subject_id: subject.clone(),
                    filter_id: *template,
                    verdict: None,
                    raw_reply: raw,
                });
                return Ok(FilterRun {
                    decision: FilterDecision::Unparseable(*template),
                    outcomes,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(FilterRun { decision: FilterDecision::Kept, outcomes })
}

/// Strip a leading question marker and surrounding whitespace from a raw
/// completion. Returns None when nothing remains.
pub fn parse_candidate_text(reply: &str) -> Option<String> {
    let mut text = reply.trim();
    for marker in ["### Question:", "Question:"] {
        if let Some(rest) = text.strip_prefix(marker) {
            text = rest.trim_start();
            break;
        }
    }
    let text = text.trim();
    if text.is_empty() {
        None
    } else {
        Some(text.to_string())
    }
}

pub struct SeedGenReport {
    pub pool: Vec<Instruction>,
    pub audit: Vec<FilterOutcome>,
    pub drops: BTreeMap<String, usize>,
    /// Grid prompts issued (the candidate budget).
    pub candidates: usize,
    pub sampled_doc_ids: Vec<String>,
}

/// Sample `sample_size` documents without replacement and issue each
/// one's 80-prompt tag grid. Every reply is parsed into one candidate
/// instruction; survivors of the instruction filters form the seed pool
/// with iteration 0 and their generating tags attached.
pub fn generate_seeds(
    gateway: &LlmGateway,
    library: &PromptLibrary,
    docs: &[Document],
    sample_size: usize,
    rng_seed: u64,
    decoding: GenDecoding,
) -> Result<SeedGenReport, SeedError> {
    if docs.is_empty() {
        return Err(SeedError::EmptyDocs);
    }
    if sample_size > docs.len() {
        return Err(SeedError::SampleTooLarge { want: sample_size, have: docs.len() });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    let sampled = rand::seq::index::sample(&mut rng, docs.len(), sample_size);

    let mut report = SeedGenReport {
        pool: Vec::new(),
        audit: Vec::new(),
        drops: BTreeMap::new(),
        candidates: 0,
        sampled_doc_ids: Vec::new(),
    };
    let mut seen_ids: HashSet<String> = HashSet::new();

    for doc_idx in sampled.iter() {
        let doc = &docs[doc_idx];
        report.sampled_doc_ids.push(doc.doc_id.clone());
        for cell in seed_prompt_grid(library, doc)? {
            report.candidates += 1;
            let req = ChatRequest::new(cell.prompt.text.clone(), "seed.generate")
                .with_decoding(decoding.temperature, decoding.max_tokens);
            let reply = match gateway.chat(&req) {
                Ok(reply) => reply,
                Err(GatewayError::Backend { .. }) => {
                    *report.drops.entry("gateway_error".to_string()).or_insert(0) += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let Some(text) = parse_candidate_text(&reply) else {
                *report.drops.entry("empty_reply".to_string()).or_insert(0) += 1;
                continue;
            };
            let run = filter_instruction(gateway, library, &text)?;
            report.audit.extend(run.outcomes);
            match run.decision {
                FilterDecision::Kept => {}
                FilterDecision::Dropped(template) => {
                    *report
                        .drops
                        .entry(format!("filter_{}", short_name(template)))
                        .or_insert(0) += 1;
                    continue;
                }
                FilterDecision::Unparseable(_) => {
                    *report.drops.entry("filter_unparseable".to_string()).or_insert(0) += 1;
                    continue;
                }
            }
            let instr = Instruction::new(text, &doc.doc_id, Some(cell.tags.clone()), 0);
            if !seen_ids.insert(instr.instr_id.clone()) {
                *report.drops.entry("duplicate_instruction".to_string()).or_insert(0) += 1;
                continue;
            }
            report.pool.push(instr);
        }
    }
    Ok(report)
}
