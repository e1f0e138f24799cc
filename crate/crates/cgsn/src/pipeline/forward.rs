//! Segment loop: split the document, walk segments in order, carry bank
//! state and the evidence memory across steps, and concatenate logits.
//!
//! State crossing a segment boundary (banks, cached summary) is always
//! detached tensor data; gradients never flow between segments. At segment
//! 0 the banks are the learned initial embeddings, so those train through
//! the segment-0 loss; the memory write is skipped at segment 0.

use std::ops::Range;

use crate::encoder::encode_segment;
use crate::evidence_memory::{summarize, write_memory, EvidenceMemory};
use crate::global_graph::{
    compress_receive, enhance_local, run_global_hops, selection_logits, GlobalGraph, SkippedLevel,
};
use crate::local_graph::{init_local_graph, level_interact, run_local_hops, LocalGraph};
use crate::model::{CgsnModel, CgsnParams};
use crate::numerics::{mem, Tensor, Value};
use crate::pipeline::data::{Document, Instance};
use crate::pipeline::config::ModelConfig;
use crate::{Error, Result};

/// Order-preserving runs of at most `n_seg` paragraphs; the last segment
/// may be short.
pub fn segment_document(doc: &Document, n_seg: usize) -> Result<Vec<Range<usize>>> {
    if doc.is_empty() {
        return Err(Error::EmptyDocument);
    }
    assert!(n_seg >= 1, "n_seg must be at least 1");
    let n = doc.len();
    Ok((0..n)
        .step_by(n_seg)
        .map(|start| start..(start + n_seg).min(n))
        .collect())
}

/// Detached bank state carried between segments.
#[derive(Clone)]
pub struct CarriedBanks {
    pub sentence: Tensor,
    pub paragraph: Tensor,
    pub document: Tensor,
}

impl CarriedBanks {
    fn from_graph(banks: &GlobalGraph) -> CarriedBanks {
        CarriedBanks {
            sentence: banks.sentence.tensor().clone(),
            paragraph: banks.paragraph.tensor().clone(),
            document: banks.document.tensor().clone(),
        }
    }

    fn to_graph(&self) -> GlobalGraph {
        GlobalGraph {
            sentence: Value::constant(self.sentence.clone()),
            paragraph: Value::constant(self.paragraph.clone()),
            document: Value::constant(self.document.clone()),
        }
    }
}

/// Per-document streaming state. Banks and memory reset with each new
/// document; the memory is absent until the first segment completes.
#[derive(Default, Clone)]
pub struct DocState {
    pub banks: Option<CarriedBanks>,
    pub memory: EvidenceMemory,
    pub next_segment: usize,
}

impl DocState {
    pub fn new() -> DocState {
        DocState::default()
    }
}

pub struct SegmentOutput {
    /// Detached per-paragraph logits of this segment.
    pub logits: Vec<f64>,
    /// Recorded loss (training mode only).
    pub loss: Option<Value>,
    pub skipped: Vec<SkippedLevel>,
}

/// One time step of the selector over `instance.document[range]`.
/// `with_loss` also computes the mean binary cross-entropy against the
/// instance's gold labels for this segment.
pub fn run_segment(
    params: &CgsnParams,
    config: &ModelConfig,
    model: &CgsnModel,
    instance: &Instance,
    range: Range<usize>,
    state: &mut DocState,
    with_loss: bool,
) -> Result<SegmentOutput> {
    let t = state.next_segment;

    // Banks enter either as the learned initial embeddings (t = 0) or as
    // detached carried state; the memory write happens before anything
    // else, and only after the first segment.
    let mut banks = if config.use_global_graph {
        let fresh = match (&state.banks, t) {
            (Some(carried), _) if t > 0 => carried.to_graph(),
            _ => params.bank_init.fresh_banks(),
        };
        Some(fresh)
    } else {
        None
    };
    if let Some(b) = &banks {
        if config.use_memory && t > 0 {
            banks = Some(write_memory(&state.memory, b, &params.memory)?);
        }
    }

    let paragraphs = &instance.document.paragraphs[range.clone()];
    let enc = encode_segment(
        &instance.question,
        paragraphs,
        &model.vocab,
        &params.encoder,
        config.paragraph_anchor,
    )?;

    let init = init_local_graph(&enc)?;
    let local = LocalGraph {
        token_nodes: level_interact(&init.token_nodes, &params.token_interact)?,
        sentence_nodes: level_interact(&init.sentence_nodes, &params.sentence_interact)?,
        paragraph_nodes: level_interact(&init.paragraph_nodes, &params.paragraph_interact)?,
        segment_node: init.segment_node.clone(),
        sentence_token_groups: init.sentence_token_groups.clone(),
        sentence_paragraph: init.sentence_paragraph.clone(),
    };
    let local = run_local_hops(&local, &params.local_hops)?;

    let mut skipped = Vec::new();
    let enhanced = match &banks {
        Some(b) => {
            let (received, skip) = compress_receive(&local, b, &params.reception)?;
            skipped = skip;
            let hopped = run_global_hops(&received, &params.global_pairs, config.global_hops)?;
            let enhanced = enhance_local(&local.paragraph_nodes, &hopped, &params.enhance)?;
            banks = Some(hopped);
            enhanced
        }
        None => local.paragraph_nodes.clone(),
    };

    let logits = selection_logits(&enhanced, &params.head)?;
    let loss = if with_loss {
        let labels = instance.labels(range.start, range.end);
        Some(crate::global_graph::bce_with_logits(&logits, &labels)?)
    } else {
        None
    };

    if config.use_global_graph && config.use_memory {
        state.memory.store(summarize(&logits, &enhanced)?);
    }
    if let Some(b) = &banks {
        state.banks = Some(CarriedBanks::from_graph(b));
    }
    state.next_segment += 1;

    Ok(SegmentOutput {
        logits: logits.data().to_vec(),
        loss,
        skipped,
    })
}

/// What one whole-document pass observed.
#[derive(Debug, Default, Clone)]
pub struct ForwardTrace {
    pub segments: usize,
    /// Peak live tensor bytes while each segment was processed.
    pub segment_peak_bytes: Vec<usize>,
    pub skipped_levels: Vec<(usize, SkippedLevel)>,
}

pub struct DocumentForward {
    /// One logit per paragraph, whole document.
    pub logits: Vec<f64>,
    pub trace: ForwardTrace,
}

/// Inference pass over a full document: segments strictly in order, logits
/// concatenated document-wide.
pub fn forward_document(model: &CgsnModel, instance: &Instance) -> Result<DocumentForward> {
    let (params, _) = model.bind(None);
    let ranges = segment_document(&instance.document, model.config.n_seg)?;
    let mut state = DocState::new();
    let mut logits = Vec::with_capacity(instance.document.len());
    let mut trace = ForwardTrace {
        segments: ranges.len(),
        ..ForwardTrace::default()
    };
    for (t, range) in ranges.into_iter().enumerate() {
        mem::reset_peak();
        let out = run_segment(&params, &model.config, model, instance, range, &mut state, false)?;
        trace.segment_peak_bytes.push(mem::peak_tensor_bytes());
        for s in out.skipped {
            trace.skipped_levels.push((t, s));
        }
        logits.extend(out.logits);
    }
    Ok(DocumentForward { logits, trace })
}

/// Thresholded evidence choice for one instance.
#[derive(Debug, Clone)]
pub struct Selection {
    /// Chosen paragraph indices, ascending.
    pub indices: Vec<usize>,
    /// Selection probabilities aligned with `indices`.
    pub probabilities: Vec<f64>,
    /// Sigmoid probabilities for every paragraph.
    pub all_probabilities: Vec<f64>,
}

/// Paragraphs with sigma(logit) > threshold; when none clears it, the
/// single argmax paragraph (lowest index on ties).
pub fn select_evidence(model: &CgsnModel, instance: &Instance, threshold: f64) -> Result<Selection> {
    let forward = forward_document(model, instance)?;
    let probs: Vec<f64> = forward
        .logits
        .iter()
        .map(|&e| 1.0 / (1.0 + (-e).exp()))
        .collect();
    Ok(select_from_probabilities(&probs, threshold))
}

pub fn select_from_probabilities(probs: &[f64], threshold: f64) -> Selection {
    let mut indices: Vec<usize> = (0..probs.len())
        .filter(|&j| probs[j] > threshold)
        .collect();
    if indices.is_empty() && !probs.is_empty() {
        let mut best = 0;
        for (j, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = j;
            }
        }
        indices.push(best);
    }
    let probabilities = indices.iter().map(|&j| probs[j]).collect();
    Selection {
        indices,
        probabilities,
        all_probabilities: probs.to_vec(),
    }
}

/// Pick the grid threshold with the best mean evidence F1 on `instances`.
/// Ties keep the earlier grid entry.
pub fn tune_threshold(
    model: &CgsnModel,
    instances: &[Instance],
    grid: &[f64],
) -> Result<(f64, f64)> {
    let mut prob_sets = Vec::with_capacity(instances.len());
    for instance in instances {
        let forward = forward_document(model, instance)?;
        let probs: Vec<f64> = forward
            .logits
            .iter()
            .map(|&e| 1.0 / (1.0 + (-e).exp()))
            .collect();
        prob_sets.push(probs);
    }
    let mut best = (grid[0], f64::MIN);
    for &tau in grid {
        let mut sum = 0.0;
        for (probs, instance) in prob_sets.iter().zip(instances) {
            let selection = select_from_probabilities(probs, tau);
            let pred: std::collections::BTreeSet<usize> =
                selection.indices.iter().copied().collect();
            let (_, _, f1) = crate::evalkit::metrics::evidence_f1(&pred, &instance.evidence);
            sum += f1;
        }
        let mean = sum / instances.len() as f64;
        if mean > best.1 {
            best = (tau, mean);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(n: usize) -> Document {
        Document {
            paragraphs: (0..n).map(|i| vec![format!("p{i}.")]).collect(),
        }
    }

    #[test]
    fn segment_sizes_for_35_paragraphs() {
        let ranges = segment_document(&doc(35), 16).unwrap();
        let sizes: Vec<usize> = ranges.iter().map(|r| r.len()).collect();
        assert_eq!(sizes, vec![16, 16, 3]);
    }

    #[test]
    fn exactly_one_segment_when_it_fits() {
        let ranges = segment_document(&doc(16), 16).unwrap();
        assert_eq!(ranges.len(), 1);
        assert_eq!(ranges[0], 0..16);
    }

    #[test]
    fn single_paragraph_document() {
        let ranges = segment_document(&doc(1), 16).unwrap();
        assert_eq!(ranges, vec![0..1]);
    }

    #[test]
    fn empty_document_is_an_error() {
        assert!(matches!(
            segment_document(&Document { paragraphs: vec![] }, 4),
            Err(Error::EmptyDocument)
        ));
    }

    #[test]
    fn selection_threshold_and_fallback() {
        let sel = select_from_probabilities(&[0.9, 0.2, 0.6], 0.5);
        assert_eq!(sel.indices, vec![0, 2]);
        let sel = select_from_probabilities(&[0.3, 0.4, 0.4], 0.5);
        assert_eq!(sel.indices, vec![1], "argmax fallback, lowest index wins ties");
    }
}
