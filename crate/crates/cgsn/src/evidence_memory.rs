//! Cache of the previous step's evidence decision.
//!
//! At the end of segment t the selection logits are softmaxed into weights
//! over the enhanced paragraph nodes; the weighted sum is cached detached,
//! so no gradient crosses the segment boundary through it. At the start of
//! segment t+1 the cached summary is written into the global paragraph
//! bank through a concat feed-forward and a gate computed on the
//! concatenation itself. Sentence and document banks are never touched.

use crate::blocks::{gate, gated_interpolate, GateParams};
use crate::global_graph::GlobalGraph;
use crate::numerics::{Tensor, Value};
use crate::{Error, Result};

/// The cached summary; absent before the first segment of each document.
#[derive(Clone, Default)]
pub struct EvidenceMemory {
    summary: Option<Tensor>,
}

impl EvidenceMemory {
    pub fn new() -> EvidenceMemory {
        EvidenceMemory::default()
    }

    pub fn is_empty(&self) -> bool {
        self.summary.is_none()
    }

    pub fn summary(&self) -> Option<&Tensor> {
        self.summary.as_ref()
    }

    pub fn store(&mut self, summary: Tensor) {
        self.summary = Some(summary);
    }

    pub fn clear(&mut self) {
        self.summary = None;
    }
}

/// Writing-network parameters: concat feed-forward plus gate.
pub struct MemoryWriteParams {
    pub ffnn_w: Value,
    pub ffnn_b: Value,
    pub gate: GateParams,
}

/// softmax(logits)-weighted sum of the enhanced paragraph nodes, returned
/// as a plain tensor so it is detached from the tape by construction.
pub fn summarize(logits: &Value, enhanced: &Value) -> Result<Tensor> {
    let alpha = logits.transpose()?.softmax_rows(None)?;
    let sum = alpha.matmul(enhanced)?;
    Ok(sum.tensor().clone())
}

/// Fuse the cached summary into every global paragraph node:
/// cat = [bank_i; summary], merge = tanh(cat W + b), gamma = gate(cat),
/// updated = (1-gamma) bank_i + gamma merge.
pub fn write_memory(
    mem: &EvidenceMemory,
    banks: &GlobalGraph,
    params: &MemoryWriteParams,
) -> Result<GlobalGraph> {
    let summary = mem.summary().ok_or(Error::MissingSummary)?;
    let n = banks.paragraph.shape()[0];
    let summary_rows = Value::constant(summary.clone()).broadcast_rows(n)?;
    let cat = Value::concat_cols(&[banks.paragraph.clone(), summary_rows])?;
    let merge = cat.matmul(&params.ffnn_w)?.add_row(&params.ffnn_b)?.tanh();
    let gamma = gate(&cat, &params.gate)?;
    let paragraph = gated_interpolate(&banks.paragraph, &merge, &gamma)?;
    Ok(GlobalGraph {
        sentence: banks.sentence.clone(),
        paragraph,
        document: banks.document.clone(),
    })
}
