//! Training loop: shuffled epochs, batches of documents advanced
//! segment-synchronously, one optimizer step per segment-batch (inside the
//! segment loop), linear warmup then linear decay. Deterministic given the
//! config seed.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::encoder::Vocabulary;
use crate::model::CgsnModel;
use crate::numerics::{AdamState, Tape, Tensor};
use crate::pipeline::checkpoint::TrainMeta;
use crate::pipeline::config::ModelConfig;
use crate::pipeline::data::Instance;
use crate::pipeline::forward::{run_segment, segment_document, DocState};
use crate::{Error, Result};

pub struct TrainOutcome {
    pub model: CgsnModel,
    pub meta: TrainMeta,
    pub final_loss: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainProgress {
    pub step: u64,
    pub total_steps: u64,
    pub epoch: usize,
    pub loss: f64,
    pub lr_scale: f64,
}

/// Linear warmup to 1 over `warmup_steps`, then linear decay; never
/// exactly zero so the final step still moves.
fn lr_scale(step: u64, total: u64, warmup_steps: u64) -> f64 {
    if warmup_steps > 0 && step <= warmup_steps {
        step as f64 / warmup_steps as f64
    } else if total > warmup_steps {
        (total - step + 1) as f64 / (total - warmup_steps) as f64
    } else {
        1.0
    }
}

/// Loss must stay finite; anything else aborts with diagnostics.
pub fn ensure_finite_loss(loss: f64, step: u64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { step, loss })
    }
}

/// Vocabulary over every question and sentence of the training set.
pub fn vocabulary_from_instances(instances: &[Instance], min_freq: usize) -> Result<Vocabulary> {
    let mut lines: Vec<&str> = Vec::new();
    for instance in instances {
        lines.push(&instance.question);
        for paragraph in &instance.document.paragraphs {
            for sentence in paragraph {
                lines.push(sentence);
            }
        }
    }
    Vocabulary::build(lines, min_freq)
}

pub fn train(instances: &[Instance], config: &ModelConfig) -> Result<TrainOutcome> {
    train_with_progress(instances, config, &mut |_| {})
}

pub fn train_with_progress(
    instances: &[Instance],
    config: &ModelConfig,
    progress: &mut dyn FnMut(TrainProgress),
) -> Result<TrainOutcome> {
    config.validate()?;
    if instances.is_empty() {
        return Err(Error::Dataset {
            path: String::new(),
            message: "training set is empty".into(),
        });
    }

    let vocab = vocabulary_from_instances(instances, config.min_token_freq)?;
    let mut model = CgsnModel::new(config.clone(), vocab);

    // Epoch orders are drawn up front so the step count (and with it the
    // schedule) is known exactly.
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let segments_per_doc: Vec<usize> = instances
        .iter()
        .map(|inst| segment_document(&inst.document, config.n_seg).map(|r| r.len()))
        .collect::<Result<_>>()?;
    let mut epoch_orders = Vec::with_capacity(config.epochs);
    let mut total_steps: u64 = 0;
    for _ in 0..config.epochs {
        let mut order: Vec<usize> = (0..instances.len()).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            total_steps += batch.iter().map(|&i| segments_per_doc[i]).max().unwrap() as u64;
        }
        epoch_orders.push(order);
    }
    let warmup_steps = (config.warmup * total_steps as f64).round() as u64;

    let mut adam = AdamState::new(&model.store.shapes(), config.adam_hyper());
    let mut step: u64 = 0;
    let mut last_loss = f64::NAN;

    for (epoch, order) in epoch_orders.iter().enumerate() {
        for batch in order.chunks(config.batch_size) {
            let docs: Vec<&Instance> = batch.iter().map(|&i| &instances[i]).collect();
            let ranges: Vec<Vec<std::ops::Range<usize>>> = docs
                .iter()
                .map(|inst| segment_document(&inst.document, config.n_seg))
                .collect::<Result<_>>()?;
            let max_segments = ranges.iter().map(Vec::len).max().unwrap();
            let mut states: Vec<DocState> = docs.iter().map(|_| DocState::new()).collect();

            for s in 0..max_segments {
                step += 1;
                let tape = Tape::new();
                let (params, leaves) = model.bind(Some(&tape));
                let mut losses = Vec::new();
                for (i, inst) in docs.iter().enumerate() {
                    if s >= ranges[i].len() {
                        continue; // exhausted document, padded out of the loss
                    }
                    let out = run_segment(
                        &params,
                        config,
                        &model,
                        inst,
                        ranges[i][s].clone(),
                        &mut states[i],
                        true,
                    )?;
                    losses.push(out.loss.expect("training segment computes a loss"));
                }
                let mut batch_loss = losses[0].clone();
                for l in &losses[1..] {
                    batch_loss = batch_loss.add(l).map_err(crate::Error::from)?;
                }
                let batch_loss = batch_loss.scale(1.0 / losses.len() as f64);
                let loss_value = batch_loss.item();
                ensure_finite_loss(loss_value, step)?;
                last_loss = loss_value;

                let grads = tape.backward(&batch_loss).map_err(crate::Error::from)?;
                let grad_tensors: Vec<Tensor> =
                    leaves.iter().map(|leaf| grads.get_or_zeros(leaf)).collect();
                drop(grads);
                drop(params);
                let scale = lr_scale(step, total_steps, warmup_steps);
                adam.step(model.store.tensors_mut(), &grad_tensors, scale)
                    .map_err(crate::Error::from)?;

                progress(TrainProgress {
                    step,
                    total_steps,
                    epoch,
                    loss: loss_value,
                    lr_scale: scale,
                });
            }
        }
    }

    let meta = TrainMeta {
        step,
        epoch: config.epochs,
        seed: config.seed,
    };
    Ok(TrainOutcome {
        model,
        meta,
        final_loss: last_loss,
        steps: step,
    })
}
