//! Dialogue NLU recast as per-class question answering.
//!
//! Intent detection (ID) and value extraction (VE) are compiled into one
//! question per (utterance, class) pair. A sequence-to-sequence model answers
//! `yes`/`no` for intents and a value (or `unanswerable`) for slots; the
//! answers are decoded back into structured predictions and scored with
//! micro-F1.
//!
//! This crate holds the model-free parts of the pipeline:
//!
//! - [`corpus`]: ontologies, annotated utterances, dataset loaders and fold splits
//! - [`instruction`]: instruction templates and the per-class compiler
//! - [`scoring`]: answer decoding, prediction assembly and micro-F1
//! - [`analysis`]: domain similarity and transfer/similarity correlation
//! - [`embedding`]: the sentence-encoder abstraction used by analysis and baselines

pub mod analysis;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod instruction;
pub mod jsonl;
pub mod normalize;
pub mod scoring;

pub use error::{Error, Result};
