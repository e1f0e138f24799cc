//! Evidence selection over arbitrarily long documents with a compressive
//! graph selector network.
//!
//! A document is processed segment by segment. Each segment is encoded
//! question-aware, lifted into a four-level local graph (token, sentence,
//! paragraph, segment) with unidirectional attention edges, then compressed
//! into fixed-size global node banks that persist across segments. Local
//! paragraph nodes are enhanced from the global bank and scored for
//! evidence; a detached, logit-weighted summary of the scored paragraphs is
//! written back into the bank at the next step to damp redundant picks.
//!
//! Everything trains through the in-crate f64 autodiff engine in
//! [`numerics`]; [`pipeline`] holds the document loop, trainer, checkpoint
//! format and CLI entry points; [`evalkit`] has the metrics, the synthetic
//! corpus generator and a lexical baseline.

pub mod blocks;
pub mod encoder;
pub mod evalkit;
pub mod evidence_memory;
pub mod global_graph;
pub mod local_graph;
pub mod model;
pub mod numerics;
pub mod pipeline;

use thiserror::Error;

pub use model::CgsnModel;
pub use numerics::{Tensor, Value};
pub use pipeline::config::ModelConfig;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("question occupies {question_tokens} tokens but the pair budget is {budget} ({max_len} minus markers)")]
    QuestionTooLong {
        question_tokens: usize,
        budget: usize,
        max_len: usize,
    },
    #[error("question is empty after tokenization")]
    EmptyQuestion,
    #[error("segment has no paragraphs")]
    EmptySegment,
    #[error("sentence {sentence} of paragraph {paragraph} has no tokens")]
    EmptySentence { sentence: usize, paragraph: usize },
    #[error("evidence label must be 0 or 1, got {0}")]
    InvalidLabel(f64),
    #[error("evidence memory holds no summary; write_memory may only run after the first segment")]
    MissingSummary,
    #[error("empty document")]
    EmptyDocument,
    #[error("config: {0}")]
    Config(String),
    #[error("dataset {path}: {message}")]
    Dataset { path: String, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("corpus spec: {0}")]
    CorpusSpec(String),
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: u64, loss: f64 },
    #[error("prediction file {path}: {message}")]
    Predictions { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
