//! Instruction pool augmentation with UCB exemplar selection.
//!
//! Each round selects the k pool members with the highest upper
//! confidence bound `mean_quality + C * sqrt(2 ln N / n)`, renders the
//! few-shot "Think Different" prompt against a document, filters the
//! candidate, and admits it only when its maximum cosine similarity to
//! the existing pool stays below the tau threshold. Quality feedback is
//! instruction word count: every accepted candidate's length is credited
//! to the exemplars that produced it.
//!
//! Selection, credit, and insertion are serialized per round; the pool is
//! append-only and entries are never mutated after insertion.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::embedding::{cosine_sim, EmbeddingError, EmbeddingVector};
use crate::gateway::{ChatRequest, GatewayError, GenDecoding, LlmGateway};
use crate::hash::derive_seed;
use crate::prompts::{think_different_prompt, PromptError, PromptLibrary};
use crate::seed::{filter_instruction, parse_candidate_text, FilterDecision, FilterOutcome, Instruction};

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("pool has {have} members, need at least {need}")]
    PoolTooSmall { need: usize, have: usize },
    #[error("bootstrap needs a non-empty seed pool")]
    EmptyPool,
    #[error("bootstrap needs a non-empty document set")]
    NoDocuments,
    #[error("no candidate accepted across document epoch {epoch}; aborting as stagnant")]
    Stagnation { epoch: usize },
    #[error("invalid augment config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Bandit bookkeeping for one pool member.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedStats {
    pub instr_id: String,
    pub quality_sum: f64,
    pub n_selected: u64,
}

impl SeedStats {
    /// Average quality; fresh entries (n=0) report their own initial
    /// quality so they compete immediately.
    pub fn mean_quality(&self) -> f64 {
        self.quality_sum / (self.n_selected.max(1) as f64)
    }
}

/// UCB score. Never-selected seeds get the +infinity sentinel so forced
/// exploration happens before any re-selection.
pub fn ucb_score(stats: &SeedStats, total_selections: u64, exploration_c: f64) -> f64 {
    if stats.n_selected == 0 {
        return f64::INFINITY;
    }
    let total = total_selections.max(1) as f64;
    stats.mean_quality() + exploration_c * (2.0 * total.ln() / stats.n_selected as f64).sqrt()
}

/// Accept a candidate only when its similarity to every pool member stays
/// strictly below tau. An empty pool accepts vacuously.
pub fn tau_dedup(
    candidate: &EmbeddingVector,
    pool: &[&EmbeddingVector],
    tau: f64,
) -> Result<bool, EmbeddingError> {
    for member in pool {
        if cosine_sim(candidate, member)? >= tau {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityMeasure {
    WordCount,
}

impl QualityMeasure {
    pub fn of(&self, instr: &Instruction) -> f64 {
        match self {
            QualityMeasure::WordCount => instr.word_count as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    Ucb,
    /// Uniform exemplar sampling; the ablation baseline.
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Fixed at 5: the prompt template has exactly five exemplar slots.
    pub k_exemplars: usize,
    /// Similarity ceiling for admission to the pool.
    pub tau: f64,
    pub rounds: Option<usize>,
    pub target_pool_size: Option<usize>,
    pub quality_measure: QualityMeasure,
    pub candidates_per_round: usize,
    pub checkpoint_interval: usize,
    pub selection: SelectionStrategy,
    /// Optional extra requirement line for the prompt's command slot.
    pub extra_requirement: Option<String>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            k_exemplars: 5,
            tau: 0.85,
            rounds: Some(500),
            target_pool_size: None,
            quality_measure: QualityMeasure::WordCount,
            candidates_per_round: 1,
            checkpoint_interval: 500,
            selection: SelectionStrategy::Ucb,
            extra_requirement: None,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.k_exemplars != 5 {
            return Err(AugmentError::InvalidConfig(format!(
                "k_exemplars must be 5 (template slot count), got {}",
                self.k_exemplars
            )));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(AugmentError::InvalidConfig(format!("tau must be in (0,1), got {}", self.tau)));
        }
        if self.rounds.is_none() && self.target_pool_size.is_none() {
            return Err(AugmentError::InvalidConfig(
                "set rounds and/or target_pool_size".to_string(),
            ));
        }
        if self.candidates_per_round < 1 {
            return Err(AugmentError::InvalidConfig("candidates_per_round must be >= 1".to_string()));
        }
        if self.checkpoint_interval < 1 {
            return Err(AugmentError::InvalidConfig("checkpoint_interval must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Bandit state shared across rounds. `total_selections` counts selection
/// events (one per round).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BanditState {
    pub stats: BTreeMap<String, SeedStats>,
    pub total_selections: u64,
    pub exploration_c: f64,
    pub rng_seed: u64,
}

impl BanditState {
    pub fn new(exploration_c: f64, rng_seed: u64) -> Self {
        BanditState { stats: BTreeMap::new(), total_selections: 0, exploration_c, rng_seed }
    }
}

/// Audit record for one candidate attempt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentAuditRecord {
    pub round: usize,
    pub doc_id: String,
    pub exemplar_ids: Vec<String>,
    pub candidate_hash: Option<String>,
    pub accepted: bool,
    pub reject_reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BootstrapStatus {
    /// Round or pool-size target reached.
    Completed,
    /// The per-invocation round budget ran out first.
    BudgetExhausted,
}

/// Serializable snapshot used for crash-safe checkpointing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentSnapshot {
    pub rounds_completed: usize,
    pub epoch_acceptances: usize,
    pub bandit: BanditState,
    pub pool: Vec<crate::seed::InstructionRecord>,
}

pub struct Augmentor<'a> {
    gateway: &'a LlmGateway,
    library: &'static PromptLibrary,
    cfg: AugmentConfig,
    decoding: GenDecoding,
    pub state: BanditState,
    pub pool: Vec<Instruction>,
    embeddings: HashMap<String, EmbeddingVector>,
    pub audit: Vec<AugmentAuditRecord>,
    pub filter_audit: Vec<FilterOutcome>,
    pub drops: BTreeMap<String, usize>,
    pub rounds_completed: usize,
    epoch_acceptances: usize,
}

impl<'a> Augmentor<'a> {
    /// Start a fresh bootstrap from a seed pool. Every seed enters the
    /// bandit with n_selected = 0 and quality_sum equal to its own
    /// quality, so its mean starts at its own length.
    pub fn new(
        gateway: &'a LlmGateway,
        cfg: AugmentConfig,
        exploration_c: f64,
        rng_seed: u64,
        pool: Vec<Instruction>,
        decoding: GenDecoding,
    ) -> Result<Self, AugmentError> {
        cfg.validate()?;
        let mut state = BanditState::new(exploration_c, rng_seed);
        for instr in &pool {
            state.stats.insert(
                instr.instr_id.clone(),
                SeedStats {
                    instr_id: instr.instr_id.clone(),
                    quality_sum: cfg.quality_measure.of(instr),
                    n_selected: 0,
                },
            );
        }
        Ok(Augmentor {
            gateway,
            library: PromptLibrary::builtin(),
            cfg,
            decoding,
            state,
            pool,
            embeddings: HashMap::new(),
            audit: Vec::new(),
            filter_audit: Vec::new(),
            drops: BTreeMap::new(),
            rounds_completed: 0,
            epoch_acceptances: 0,
        })
    }

    /// Rebuild an augmentor from a checkpoint snapshot.
    pub fn resume(
        gateway: &'a LlmGateway,
        cfg: AugmentConfig,
        snapshot: AugmentSnapshot,
        decoding: GenDecoding,
    ) -> Result<Self, AugmentError> {
        cfg.validate()?;
        Ok(Augmentor {
            gateway,
            library: PromptLibrary::builtin(),
            cfg,
            decoding,
            state: snapshot.bandit,
            pool: snapshot.pool.into_iter().map(Instruction::from).collect(),
            embeddings: HashMap::new(),
            audit: Vec::new(),
            filter_audit: Vec::new(),
            drops: BTreeMap::new(),
            rounds_completed: snapshot.rounds_completed,
            epoch_acceptances: snapshot.epoch_acceptances,
        })
    }

    pub fn snapshot(&self) -> AugmentSnapshot {
        AugmentSnapshot {
            rounds_completed: self.rounds_completed,
            epoch_acceptances: self.epoch_acceptances,
            bandit: self.state.clone(),
            pool: self.pool.iter().map(crate::seed::InstructionRecord::from).collect(),
        }
    }

    pub fn config(&self) -> &AugmentConfig {
        &self.cfg
    }

    /// Pick k exemplars, recomputing every score from the stats map.
    /// Ties break by higher mean quality, then lexicographic instr_id.
    /// Picking a seed increments its n_selected; the round counter
    /// (total_selections) increments once per call.
    pub fn select_exemplars(&mut self, k: usize) -> Result<Vec<Instruction>, AugmentError> {
        if self.pool.len() < k {
            return Err(AugmentError::PoolTooSmall { need: k, have: self.pool.len() });
        }
        let chosen_ids: Vec<String> = match self.cfg.selection {
            SelectionStrategy::Ucb => {
                let mut scored: Vec<(f64, f64, &str)> = self
                    .pool
                    .iter()
                    .map(|instr| {
                        let stats = &self.state.stats[&instr.instr_id];
                        (
                            ucb_score(stats, self.state.total_selections, self.state.exploration_c),
                            stats.mean_quality(),
                            instr.instr_id.as_str(),
                        )
                    })
                    .collect();
                scored.sort_by(|a, b| {
                    b.0.partial_cmp(&a.0)
                        .unwrap()
                        .then(b.1.partial_cmp(&a.1).unwrap())
                        .then(a.2.cmp(b.2))
                });
                scored.into_iter().take(k).map(|(_, _, id)| id.to_string()).collect()
            }
            SelectionStrategy::Random => {
                let seed = derive_seed(
                    self.state.rng_seed,
                    &format!("select-{}", self.state.total_selections),
                );
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                let picked = rand::seq::index::sample(&mut rng, self.pool.len(), k);
                picked.iter().map(|i| self.pool[i].instr_id.clone()).collect()
            }
        };
        for id in &chosen_ids {
            self.state.stats.get_mut(id).expect("pool member has stats").n_selected += 1;
        }
        self.state.total_selections += 1;

        let by_id: HashMap<&str, &Instruction> =
            self.pool.iter().map(|i| (i.instr_id.as_str(), i)).collect();
        Ok(chosen_ids.iter().map(|id| by_id[id.as_str()].clone()).collect())
    }

    /// One augmentation round against a document. Returns the accepted
    /// instructions (possibly empty); rejections are recorded in the
    /// audit trail and drop counters.
    pub fn augment_round(&mut self, doc: &Document) -> Result<Vec<Instruction>, AugmentError> {
        let round = self.rounds_completed + 1;
        let exemplars = self.select_exemplars(self.cfg.k_exemplars)?;
        let exemplar_ids: Vec<String> = exemplars.iter().map(|e| e.instr_id.clone()).collect();
        let exemplar_texts: Vec<&str> = exemplars.iter().map(|e| e.text.as_str()).collect();
        let prompt = think_different_prompt(
            self.library,
            doc,
            &exemplar_texts,
            self.cfg.extra_requirement.as_deref(),
        )?;

        let mut accepted = Vec::new();
        for _ in 0..self.cfg.candidates_per_round {
            let mut reject = |reason: &str,
                              hash: Option<String>,
                              audit: &mut Vec<AugmentAuditRecord>,
                              drops: &mut BTreeMap<String, usize>| {
                *drops.entry(reason.to_string()).or_insert(0) += 1;
                audit.push(AugmentAuditRecord {
                    round,
                    doc_id: doc.doc_id.clone(),
                    exemplar_ids: exemplar_ids.clone(),
                    candidate_hash: hash,
                    accepted: false,
                    reject_reason: Some(reason.to_string()),
                });
            };

            let req = ChatRequest::new(prompt.text.clone(), "augment.generate")
                .with_decoding(self.decoding.temperature, self.decoding.max_tokens);
            let reply = match self.gateway.chat(&req) {
                Ok(reply) => reply,
                Err(GatewayError::Backend { .. }) => {
                    reject("gateway_error", None, &mut self.audit, &mut self.drops);
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let Some(text) = parse_candidate_text(&reply) else {
                reject("empty_reply", None, &mut self.audit, &mut self.drops);
                continue;
            };
            let candidate = Instruction::new(text, &doc.doc_id, None, round as u32);
            let hash = Some(candidate.instr_id.clone());

            if self.state.stats.contains_key(&candidate.instr_id) {
                reject("duplicate_instruction", hash, &mut self.audit, &mut self.drops);
                continue;
            }

            let run = match filter_instruction(self.gateway, self.library, &candidate.text) {
                Ok(run) => run,
                Err(GatewayError::Backend { .. }) => {
                    reject("gateway_error", hash, &mut self.audit, &mut self.drops);
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            self.filter_audit.extend(run.outcomes);
            match run.decision {
                FilterDecision::Kept => {}
                FilterDecision::Dropped(template) => {
                    reject(
                        &format!("filter_{}", template.as_str()),
                        hash,
                        &mut self.audit,
                        &mut self.drops,
                    );
                    continue;
                }
                FilterDecision::Unparseable(_) => {
                    reject("filter_unparseable", hash, &mut self.audit, &mut self.drops);
                    continue;
                }
            }

            let embedding = match self.gateway.embed_one(&candidate.text) {
                Ok(e) => e,
                Err(GatewayError::Backend { .. }) => {
                    reject("embedding_failure", hash, &mut self.audit, &mut self.drops);
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            self.ensure_pool_embeddings()?;
            let pool_embs: Vec<&EmbeddingVector> =
                self.pool.iter().map(|i| &self.embeddings[&i.instr_id]).collect();
            if !tau_dedup(&embedding, &pool_embs, self.cfg.tau)? {
                reject("tau_duplicate", hash, &mut self.audit, &mut self.drops);
                continue;
            }

            // accept: credit exemplars, then insert with fresh stats
            let quality = self.cfg.quality_measure.of(&candidate);
            for id in &exemplar_ids {
                self.state.stats.get_mut(id).expect("exemplar has stats").quality_sum += quality;
            }
            self.state.stats.insert(
                candidate.instr_id.clone(),
                SeedStats { instr_id: candidate.instr_id.clone(), quality_sum: quality, n_selected: 0 },
            );
            self.embeddings.insert(candidate.instr_id.clone(), embedding);
            self.audit.push(AugmentAuditRecord {
                round,
                doc_id: doc.doc_id.clone(),
                exemplar_ids: exemplar_ids.clone(),
                candidate_hash: Some(candidate.instr_id.clone()),
                accepted: true,
                reject_reason: None,
            });
            self.pool.push(candidate.clone());
            accepted.push(candidate);
        }
        self.rounds_completed = round;
        Ok(accepted)
    }

    fn ensure_pool_embeddings(&mut self) -> Result<(), AugmentError> {
        let missing: Vec<(String, String)> = self
            .pool
            .iter()
            .filter(|i| !self.embeddings.contains_key(&i.instr_id))
            .map(|i| (i.instr_id.clone(), i.text.clone()))
            .collect();
        if missing.is_empty() {
            return Ok(());
        }
        let texts: Vec<String> = missing.iter().map(|(_, t)| t.clone()).collect();
        let vectors = self.gateway.embed(&texts)?;
        for ((id, _), vector) in missing.into_iter().zip(vectors) {
            self.embeddings.insert(id, vector);
        }
        Ok(())
    }

    /// Iterate augmentation rounds, cycling documents in a seeded random
    /// order without replacement per epoch, until the round or pool-size
    /// target is reached. `budget` caps rounds for this invocation only;
    /// `on_checkpoint` fires every `checkpoint_interval` completed rounds.
    pub fn run_bootstrap(
        &mut self,
        docs: &[Document],
        budget: Option<usize>,
        on_checkpoint: &mut dyn FnMut(&AugmentSnapshot) -> Result<(), AugmentError>,
    ) -> Result<BootstrapStatus, AugmentError> {
        if self.pool.is_empty() {
            return Err(AugmentError::EmptyPool);
        }
        if docs.is_empty() {
            return Err(AugmentError::NoDocuments);
        }
        let mut rounds_this_call = 0usize;
        loop {
            if let Some(target) = self.cfg.target_pool_size {
                if self.pool.len() >= target {
                    return Ok(BootstrapStatus::Completed);
                }
            }
            if let Some(rounds) = self.cfg.rounds {
                if self.rounds_completed >= rounds {
                    return Ok(BootstrapStatus::Completed);
                }
            }
            if let Some(budget) = budget {
                if rounds_this_call >= budget {
                    return Ok(BootstrapStatus::BudgetExhausted);
                }
            }
            let epoch = self.rounds_completed / docs.len();
            let position = self.rounds_completed % docs.len();
            let order = epoch_order(docs.len(), self.state.rng_seed, epoch);
            let doc = &docs[order[position]];

            let accepted = self.augment_round(doc)?;
            self.epoch_acceptances += accepted.len();
            rounds_this_call += 1;

            if position == docs.len() - 1 {
                if self.epoch_acceptances == 0 {
                    return Err(AugmentError::Stagnation { epoch });
                }
                self.epoch_acceptances = 0;
            }
            if self.rounds_completed % self.cfg.checkpoint_interval == 0 {
                on_checkpoint(&self.snapshot())?;
            }
        }
    }
}

/// Document visit order for an epoch: a pure function of (seed, epoch),
/// so resuming mid-epoch reproduces the same order.
pub fn epoch_order(n: usize, rng_seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(rng_seed, &format!("epoch-{epoch}")));
    order.shuffle(&mut rng);
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::mock::{MockBackend, MockConfig};
    use crate::gateway::BackendConfig;

    fn all_pass_gateway() -> LlmGateway {
        let cfg = MockConfig { filter_pass_rate: 1.0, prescreen_flag_rate: 0.0, ..MockConfig::default() };
        LlmGateway::new(Box::new(MockBackend::new(cfg)), &BackendConfig::default())
    }

    fn stats(quality_sum: f64, n: u64) -> SeedStats {
        SeedStats { instr_id: "x".to_string(), quality_sum, n_selected: n }
    }

    fn pool_of(n: usize) -> Vec<Instruction> {
        (0..n)
            .map(|i| {
                Instruction::new(
                    format!("seed instruction number {i} with filler words {}", "pad ".repeat(i % 7)),
                    "doc",
                    None,
                    0,
                )
            })
            .collect()
    }

    fn docs(n: usize) -> Vec<Document> {
        (0..n)
            .map(|i| Document::from_text(format!("augment document {i} body text"), "s"))
            .collect()
    }

    #[test]
    fn ucb_matches_hand_arithmetic() {
        // mean 5.0 over 4 selections at N=100, C=1
        let s = stats(20.0, 4);
        let score = ucb_score(&s, 100, 1.0);
        assert!((score - 6.51743).abs() < 1e-5, "got {score}");
    }

    #[test]
    fn ucb_with_zero_c_is_the_mean() {
        let s = stats(20.0, 4);
        assert_eq!(ucb_score(&s, 100, 0.0), 5.0);
    }

    #[test]
    fn unselected_seed_gets_infinity_sentinel() {
        let s = stats(12.0, 0);
        assert_eq!(ucb_score(&s, 100, 1.0), f64::INFINITY);
    }

    #[test]
    fn tau_dedup_accepts_on_empty_pool_and_rejects_copies() {
        let a = EmbeddingVector(vec![1.0, 0.0]);
        let b = EmbeddingVector(vec![0.0, 1.0]);
        assert!(tau_dedup(&a, &[], 0.85).unwrap());
        assert!(!tau_dedup(&a, &[&a], 0.85).unwrap());
        assert!(tau_dedup(&a, &[&b], 0.85).unwrap());
    }

    #[test]
    fn fresh_seeds_are_selected_before_any_reselection() {
        let gw = all_pass_gateway();
        let mut aug = Augmentor::new(
            &gw,
            AugmentConfig::default(),
            1.0,
            5,
            pool_of(12),
            GenDecoding::default(),
        )
        .unwrap();
        let mut seen = std::collections::HashSet::new();
        // 12 seeds / 5 per round: rounds 1-2 must pick distinct fresh seeds
        for _ in 0..2 {
            for instr in aug.select_exemplars(5).unwrap() {
                assert!(seen.insert(instr.instr_id.clone()), "reselected before exploration done");
            }
        }
    }

    #[test]
    fn selection_ties_break_by_quality_then_id() {
        let gw = all_pass_gateway();
        let pool = pool_of(8);
        let mut aug = Augmentor::new(
            &gw,
            AugmentConfig::default(),
            1.0,
            5,
            pool.clone(),
            GenDecoding::default(),
        )
        .unwrap();
        let chosen = aug.select_exemplars(5).unwrap();
        // all sentinels: expect the 5 best (word_count desc, id asc)
        let mut expected: Vec<(f64, String)> = pool
            .iter()
            .map(|i| (i.word_count as f64, i.instr_id.clone()))
            .collect();
        expected.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let expected_ids: Vec<String> = expected.into_iter().take(5).map(|(_, id)| id).collect();
        let chosen_ids: Vec<String> = chosen.iter().map(|i| i.instr_id.clone()).collect();
        assert_eq!(chosen_ids, expected_ids);
    }

    #[test]
    fn pool_smaller_than_k_is_an_error() {
        let gw = all_pass_gateway();
        let mut aug = Augmentor::new(
            &gw,
            AugmentConfig::default(),
            1.0,
            5,
            pool_of(3),
            GenDecoding::default(),
        )
        .unwrap();
        assert!(matches!(
            aug.select_exemplars(5),
            Err(AugmentError::PoolTooSmall { need: 5, have: 3 })
        ));
    }

    #[test]
    fn exact_exemplar_copy_is_rejected_by_dedup() {
        let gw_probe = all_pass_gateway();
        let pool = pool_of(6);
        let doc = Document::from_text("dedup probe document".to_string(), "s");

        // find what the think-different prompt will be for round 1 and can
        // the reply to echo an existing pool member verbatim
        let mut probe = Augmentor::new(
            &gw_probe,
            AugmentConfig::default(),
            1.0,
            9,
            pool.clone(),
            GenDecoding::default(),
        )
        .unwrap();
        let exemplars = probe.select_exemplars(5).unwrap();
        let texts: Vec<&str> = exemplars.iter().map(|e| e.text.as_str()).collect();
        let prompt =
            think_different_prompt(PromptLibrary::builtin(), &doc, &texts, None).unwrap();

        let cfg = MockConfig { filter_pass_rate: 1.0, prescreen_flag_rate: 0.0, ..MockConfig::default() };
        let mut backend = MockBackend::new(cfg);
        backend.insert_canned("augment.generate", &prompt.text, &exemplars[0].text);
        let gw = LlmGateway::new(Box::new(backend), &BackendConfig::default());
        let mut aug =
            Augmentor::new(&gw, AugmentConfig::default(), 1.0, 9, pool, GenDecoding::default())
                .unwrap();
        let accepted = aug.augment_round(&doc).unwrap();
        assert!(accepted.is_empty());
        // an exact copy collides on instr_id before embeddings are needed
        assert_eq!(aug.drops.get("duplicate_instruction"), Some(&1));
    }

    #[test]
    fn accepted_candidate_credits_exemplars_and_grows_pool() {
        let gw = all_pass_gateway();
        let pool = pool_of(6);
        let doc = Document::from_text("credit probe document".to_string(), "s");
        let mut aug = Augmentor::new(
            &gw,
            AugmentConfig::default(),
            1.0,
            9,
            pool.clone(),
            GenDecoding::default(),
        )
        .unwrap();
        let before: BTreeMap<String, f64> =
            aug.state.stats.iter().map(|(k, v)| (k.clone(), v.quality_sum)).collect();
        let accepted = aug.augment_round(&doc).unwrap();
        assert_eq!(accepted.len(), 1);
        assert_eq!(aug.pool.len(), 7);
        let new = &accepted[0];
        assert_eq!(new.iteration, 1);
        assert!(new.tags.is_none());
        // every exemplar used got the candidate's word count credited
        let audit = aug.audit.last().unwrap();
        assert!(audit.accepted);
        for id in &audit.exemplar_ids {
            let delta = aug.state.stats[id].quality_sum - before[id];
            assert_eq!(delta, new.word_count as f64);
        }
        // fresh entry starts at its own quality with n=0
        let fresh = &aug.state.stats[&new.instr_id];
        assert_eq!(fresh.quality_sum, new.word_count as f64);
        assert_eq!(fresh.n_selected, 0);
    }

    #[test]
    fn bootstrap_target_already_met_is_identity() {
        let gw = all_pass_gateway();
        let pool = pool_of(10);
        let cfg = AugmentConfig {
            rounds: None,
            target_pool_size: Some(10),
            ..AugmentConfig::default()
        };
        let mut aug =
            Augmentor::new(&gw, cfg, 1.0, 2, pool.clone(), GenDecoding::default()).unwrap();
        let status = aug.run_bootstrap(&docs(4), None, &mut |_| Ok(())).unwrap();
        assert_eq!(status, BootstrapStatus::Completed);
        assert_eq!(aug.rounds_completed, 0);
        assert_eq!(aug.pool.len(), 10);
    }

    #[test]
    fn bootstrap_rounds_grow_pool_by_acceptance_count() {
        let gw = all_pass_gateway();
        let cfg = AugmentConfig { rounds: Some(3), ..AugmentConfig::default() };
        let mut aug =
            Augmentor::new(&gw, cfg, 1.0, 2, pool_of(8), GenDecoding::default()).unwrap();
        let status = aug.run_bootstrap(&docs(4), None, &mut |_| Ok(())).unwrap();
        assert_eq!(status, BootstrapStatus::Completed);
        assert_eq!(aug.rounds_completed, 3);
        let accepted: usize = aug.audit.iter().filter(|a| a.accepted).count();
        assert_eq!(aug.pool.len(), 8 + accepted);
    }

    #[test]
    fn bootstrap_is_reproducible() {
        let run = || {
            let gw = all_pass_gateway();
            let cfg = AugmentConfig { rounds: Some(10), ..AugmentConfig::default() };
            let mut aug =
                Augmentor::new(&gw, cfg, 1.0, 2, pool_of(8), GenDecoding::default()).unwrap();
            aug.run_bootstrap(&docs(4), None, &mut |_| Ok(())).unwrap();
            aug.pool.iter().map(|i| i.text.clone()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn budget_exhaustion_then_resume_matches_straight_run() {
        let cfg = AugmentConfig { rounds: Some(10), ..AugmentConfig::default() };

        let gw = all_pass_gateway();
        let mut straight =
            Augmentor::new(&gw, cfg.clone(), 1.0, 2, pool_of(8), GenDecoding::default()).unwrap();
        straight.run_bootstrap(&docs(4), None, &mut |_| Ok(())).unwrap();

        let gw2 = all_pass_gateway();
        let mut first =
            Augmentor::new(&gw2, cfg.clone(), 1.0, 2, pool_of(8), GenDecoding::default()).unwrap();
        let status = first.run_bootstrap(&docs(4), Some(4), &mut |_| Ok(())).unwrap();
        assert_eq!(status, BootstrapStatus::BudgetExhausted);
        let snapshot = first.snapshot();

        let gw3 = all_pass_gateway();
        let mut resumed =
            Augmentor::resume(&gw3, cfg, snapshot, GenDecoding::default()).unwrap();
        resumed.run_bootstrap(&docs(4), None, &mut |_| Ok(())).unwrap();

        let a: Vec<&str> = straight.pool.iter().map(|i| i.text.as_str()).collect();
        let b: Vec<&str> = resumed.pool.iter().map(|i| i.text.as_str()).collect();
        assert_eq!(a, b);
        assert_eq!(straight.state.total_selections, resumed.state.total_selections);
    }

    #[test]
    fn epoch_order_is_a_pure_function() {
        assert_eq!(epoch_order(10, 7, 3), epoch_order(10, 7, 3));
        assert_ne!(epoch_order(10, 7, 3), epoch_order(10, 7, 4));
        let mut sorted = epoch_order(10, 7, 3);
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn stagnation_aborts_after_a_barren_epoch() {
        // canned replies: always echo pool member 0 -> duplicate_instruction every round
        let pool = pool_of(6);
        let the_docs = docs(2);
        let cfg_all = MockConfig { filter_pass_rate: 1.0, prescreen_flag_rate: 0.0, ..MockConfig::default() };

        // probe prompts round by round to can duplicate replies
        let mut backend = MockBackend::new(cfg_all.clone());
        {
            let gw_probe = LlmGateway::new(
                Box::new(MockBackend::new(cfg_all)),
                &BackendConfig::default(),
            );
            let cfg = AugmentConfig { rounds: Some(2), ..AugmentConfig::default() };
            let mut probe =
                Augmentor::new(&gw_probe, cfg, 1.0, 3, pool.clone(), GenDecoding::default())
                    .unwrap();
            for round in 0..2 {
                let epoch_docs = epoch_order(the_docs.len(), 3, 0);
                let doc = &the_docs[epoch_docs[round]];
                let exemplars = probe.select_exemplars(5).unwrap();
                let texts: Vec<&str> = exemplars.iter().map(|e| e.text.as_str()).collect();
                let prompt =
                    think_different_prompt(PromptLibrary::builtin(), doc, &texts, None).unwrap();
                backend.insert_canned("augment.generate", &prompt.text, &pool[0].text);
            }
        }
        let gw = LlmGateway::new(Box::new(backend), &BackendConfig::default());
        let cfg = AugmentConfig { rounds: Some(50), ..AugmentConfig::default() };
        let mut aug = Augmentor::new(&gw, cfg, 1.0, 3, pool, GenDecoding::default()).unwrap();
        let err = aug.run_bootstrap(&the_docs, None, &mut |_| Ok(())).unwrap_err();
        assert!(matches!(err, AugmentError::Stagnation { epoch: 0 }));
    }
}
