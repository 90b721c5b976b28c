//! Core library for `fanno`, an autonomous instruction-annotation pipeline.
//!
//! The pipeline turns an unlabeled document corpus into an Alpaca-style
//! instruction-tuning dataset in four stages:
//!
//! 1. **Pre-screen** ([`corpus`], [`embedding`], [`seed`]): segment and
//!    mechanically filter raw text, thin it out with fast community
//!    detection over embeddings, then drop low-value documents with
//!    LLM judges.
//! 2. **Seed generation** ([`prompts`], [`seed`]): enumerate an 80-cell
//!    tag grid (4 difficulty x 10 task type x 2 style) per document and
//!    keep the instructions that survive three LLM filters.
//! 3. **Augmentation** ([`augment`]): grow the pool with few-shot
//!    "Think Different" prompts, picking exemplars by UCB score and
//!    rejecting near-duplicates by embedding similarity.
//! 4. **Response synthesis** ([`respond`]): answer each instruction
//!    directly and with retrieved context, then keep the candidate the
//!    faithfulness judge scores highest.
//!
//! Every model call goes through [`gateway::LlmGateway`], which speaks an
//! OpenAI-compatible wire protocol and ships a deterministic mock backend
//! so the whole pipeline runs offline and reproducibly. [`pipeline`] ties
//! the stages together with checkpointing and audit logging.

pub mod augment;
pub mod corpus;
pub mod embedding;
pub mod gateway;
pub mod hash;
pub mod jsonl;
pub mod pipeline;
pub mod prompts;
pub mod respond;
pub mod seed;

#[cfg(any(test, feature = "testutil"))]
pub mod testutil;
