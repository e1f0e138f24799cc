//! Shared fixtures for the integration and acceptance suites.

use cgsn::encoder::Vocabulary;
use cgsn::model::CgsnModel;
use cgsn::numerics::{Tape, Tensor};
use cgsn::pipeline::config::ModelConfig;
use cgsn::pipeline::data::{instance_from_record, DatasetRecord, Instance, LoadReport};
use cgsn::pipeline::forward::{run_segment, segment_document, DocState};

/// The micro configuration used by the gradient-integrity check:
/// d_h = 16, 2 heads, N_seg = 2, banks 4/2/1, one local and one global hop.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        n_seg: 2,
        n_global_sent: 4,
        n_global_para: 2,
        n_global_doc: 1,
        local_hops: 1,
        global_hops: 1,
        d_w: 8,
        d_h: 16,
        heads: 2,
        max_pair_len: 12,
        encoder_depth: 1,
        seed: 5,
        ..ModelConfig::default()
    }
}

pub fn instance(
    id: &str,
    question: &str,
    paragraphs: Vec<Vec<&str>>,
    evidence: Vec<usize>,
) -> Instance {
    let record = DatasetRecord {
        id: id.into(),
        question: question.into(),
        paragraphs: paragraphs
            .into_iter()
            .map(|p| p.into_iter().map(str::to_string).collect())
            .collect(),
        evidence,
        answer: String::new(),
    };
    instance_from_record(record, &mut LoadReport::default()).expect("valid fixture")
}

/// Four short paragraphs over a tiny vocabulary, two segments at N_seg = 2.
pub fn micro_instance() -> Instance {
    instance(
        "m0",
        "find red blue",
        vec![
            vec!["red blue sits here.", "also more words."],
            vec!["green words only."],
            vec!["blue appears again."],
            vec!["yellow filler text."],
        ],
        vec![0, 2],
    )
}

pub fn micro_vocab(instances: &[Instance]) -> Vocabulary {
    cgsn::pipeline::train::vocabulary_from_instances(instances, 1).expect("vocab")
}

pub fn micro_model() -> (CgsnModel, Instance) {
    let inst = micro_instance();
    let vocab = micro_vocab(std::slice::from_ref(&inst));
    (CgsnModel::new(micro_config(), vocab), inst)
}

/// Loss of one segment as a plain number, with the incoming state fixed.
pub fn segment_loss_value(model: &CgsnModel, instance: &Instance, seg: usize, state: &DocState) -> f64 {
    let (params, _) = model.bind(None);
    let ranges = segment_document(&instance.document, model.config.n_seg).unwrap();
    let mut st = state.clone();
    let out = run_segment(
        &params,
        &model.config,
        model,
        instance,
        ranges[seg].clone(),
        &mut st,
        true,
    )
    .unwrap();
    out.loss.unwrap().item()
}

/// Analytic gradients of one segment's loss for every parameter, plus the
/// loss value. The incoming state is fixed (detached), matching the
/// per-segment training semantics.
pub fn segment_gradients(
    model: &CgsnModel,
    instance: &Instance,
    seg: usize,
    state: &DocState,
) -> (f64, Vec<Tensor>) {
    let tape = Tape::new();
    let (params, leaves) = model.bind(Some(&tape));
    let ranges = segment_document(&instance.document, model.config.n_seg).unwrap();
    let mut st = state.clone();
    let out = run_segment(
        &params,
        &model.config,
        model,
        instance,
        ranges[seg].clone(),
        &mut st,
        true,
    )
    .unwrap();
    let loss = out.loss.unwrap();
    let value = loss.item();
    let grads = tape.backward(&loss).unwrap();
    let tensors = leaves.iter().map(|l| grads.get_or_zeros(l)).collect();
    (value, tensors)
}

/// Run segments `0..upto` in inference mode to produce the carried state.
pub fn advance_state(model: &CgsnModel, instance: &Instance, upto: usize) -> DocState {
    let (params, _) = model.bind(None);
    let ranges = segment_document(&instance.document, model.config.n_seg).unwrap();
    let mut state = DocState::new();
    for range in ranges.into_iter().take(upto) {
        run_segment(&params, &model.config, model, instance, range, &mut state, false).unwrap();
    }
    state
}
