//! Fixed-size global node banks: sentence, paragraph and document levels.
//!
//! Banks start each document at learned initial embeddings, receive
//! compressed local information once per segment (each level from exactly
//! one local level), mix across levels through bidirectional cross
//! attention, and finally lend their paragraph level back to the local
//! paragraph nodes for scoring. Every bank update is a gated interpolation,
//! so a closed gate leaves the bank untouched.

use crate::blocks::{
    fuse_residual, gated_receive, multi_head_attention, FuseParams, GatedReceiveParams, MhaParams,
};
use crate::local_graph::LocalGraph;
use crate::numerics::Value;
use crate::{Error, Result};

/// Bank state for one in-flight document. Sizes are fixed for the
/// document's lifetime.
#[derive(Clone)]
pub struct GlobalGraph {
    /// [N_sent, d]
    pub sentence: Value,
    /// [N_para, d]
    pub paragraph: Value,
    /// [N_doc, d]
    pub document: Value,
}

/// Learned initial bank embeddings; parameters, re-used as the reset state
/// at every new document.
pub struct BankInit {
    pub sentence: Value,
    pub paragraph: Value,
    pub document: Value,
}

impl BankInit {
    pub fn fresh_banks(&self) -> GlobalGraph {
        GlobalGraph {
            sentence: self.sentence.clone(),
            paragraph: self.paragraph.clone(),
            document: self.document.clone(),
        }
    }
}

/// Reception (compression) parameters, one gated attention per level.
pub struct ReceptionParams {
    pub sentence: GatedReceiveParams,
    pub paragraph: GatedReceiveParams,
    pub document: GatedReceiveParams,
}

/// Bidirectional cross-attention parameters of one level pair.
pub struct GlobalPairParams {
    pub forward: GatedReceiveParams,
    pub backward: GatedReceiveParams,
}

/// Local-paragraph enhancement from the global paragraph bank.
pub struct EnhanceParams {
    pub mha: MhaParams,
    pub fuse: FuseParams,
}

/// Linear scorer mapping an enhanced paragraph node to one logit.
pub struct SelectionHead {
    pub w: Value,
    pub b: Value,
}

/// A level whose reception was skipped because the segment had no local
/// nodes at that level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkippedLevel {
    Sentence,
    Paragraph,
    Document,
}

/// Each global node attends over all local nodes of its level (sentence
/// bank over local sentences, paragraph bank over local paragraphs,
/// document bank over the single segment node), then fuses gated. Levels
/// with no local nodes are skipped and reported.
pub fn compress_receive(
    local: &LocalGraph,
    banks: &GlobalGraph,
    params: &ReceptionParams,
) -> Result<(GlobalGraph, Vec<SkippedLevel>)> {
    let mut skipped = Vec::new();
    let sentence = if local.sentences() == 0 {
        skipped.push(SkippedLevel::Sentence);
        banks.sentence.clone()
    } else {
        gated_receive(&banks.sentence, &local.sentence_nodes, &params.sentence)?
    };
    let paragraph = if local.paragraphs() == 0 {
        skipped.push(SkippedLevel::Paragraph);
        banks.paragraph.clone()
    } else {
        gated_receive(&banks.paragraph, &local.paragraph_nodes, &params.paragraph)?
    };
    let document = gated_receive(&banks.document, &local.segment_node, &params.document)?;
    Ok((
        GlobalGraph {
            sentence,
            paragraph,
            document,
        },
        skipped,
    ))
}

/// One global hop: the cross-level cycle sentence-paragraph,
/// paragraph-document, document-sentence, each pair bidirectional and each
/// direction followed by gated fusion. Banks update progressively within
/// the hop.
pub fn global_gat_hop(banks: &GlobalGraph, pairs: &[GlobalPairParams; 3]) -> Result<GlobalGraph> {
    let paragraph = gated_receive(&banks.paragraph, &banks.sentence, &pairs[0].forward)?;
    let sentence = gated_receive(&banks.sentence, &paragraph, &pairs[0].backward)?;

    let document = gated_receive(&banks.document, &paragraph, &pairs[1].forward)?;
    let paragraph = gated_receive(&paragraph, &document, &pairs[1].backward)?;

    let sentence = gated_receive(&sentence, &document, &pairs[2].forward)?;
    let document = gated_receive(&document, &sentence, &pairs[2].backward)?;

    Ok(GlobalGraph {
        sentence,
        paragraph,
        document,
    })
}

pub fn run_global_hops(
    banks: &GlobalGraph,
    pairs: &[GlobalPairParams; 3],
    hops: usize,
) -> Result<GlobalGraph> {
    let mut current = banks.clone();
    for _ in 0..hops {
        current = global_gat_hop(&current, pairs)?;
    }
    Ok(current)
}

/// Each local paragraph node queries the global paragraph bank, and the
/// attended vector joins the local node through residual fusion. Output is
/// `[P, d]` regardless of bank size.
pub fn enhance_local(
    local_paragraphs: &Value,
    banks: &GlobalGraph,
    params: &EnhanceParams,
) -> Result<Value> {
    let attended = multi_head_attention(local_paragraphs, &banks.paragraph, None, &params.mha)?;
    fuse_residual(&attended, local_paragraphs, &params.fuse)
}

/// Per-paragraph logits from the selection head.
pub fn selection_logits(enhanced: &Value, head: &SelectionHead) -> Result<Value> {
    Ok(enhanced.matmul(&head.w)?.add_row(&head.b)?)
}

/// Logits plus the mean binary cross-entropy against {0,1} labels,
/// computed stably from logits: softplus(e) - b * e.
pub fn selection_loss(
    enhanced: &Value,
    labels: &[f64],
    head: &SelectionHead,
) -> Result<(Value, Value)> {
    if let Some(&bad) = labels.iter().find(|&&b| b != 0.0 && b != 1.0) {
        return Err(Error::InvalidLabel(bad));
    }
    let logits = selection_logits(enhanced, head)?;
    let loss = bce_with_logits(&logits, labels)?;
    Ok((logits, loss))
}

/// Mean over paragraphs of -[b log sigma(e) + (1-b) log(1-sigma(e))].
pub fn bce_with_logits(logits: &Value, labels: &[f64]) -> Result<Value> {
    let p = logits.shape()[0];
    debug_assert_eq!(labels.len(), p, "one label per paragraph");
    let label_col = Value::constant(crate::numerics::Tensor::new(
        vec![p, 1],
        labels.to_vec(),
    ));
    let per_paragraph = logits.softplus().sub(&label_col.mul(logits)?)?;
    Ok(per_paragraph.mean_all())
}
