//! Evidence-selection metrics: set F1 over paragraph indices and the
//! unique-over-total n-gram redundancy ratio across selected paragraphs.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::Serialize;

use crate::pipeline::data::Instance;
use crate::{Error, Result};

/// Set precision/recall/F1. Both sets empty counts as a correct
/// abstention (1.0); exactly one empty scores 0.
pub fn evidence_f1(pred: &BTreeSet<usize>, gold: &BTreeSet<usize>) -> (f64, f64, f64) {
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => return (1.0, 1.0, 1.0),
        (true, false) | (false, true) => return (0.0, 0.0, 0.0),
        _ => {}
    }
    let hit = pred.intersection(gold).count() as f64;
    let p = hit / pred.len() as f64;
    let r = hit / gold.len() as f64;
    let f1 = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f1)
}

fn whitespace_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.to_lowercase())
        .collect()
}

/// Distinct n-grams across all selected paragraphs over the total n-gram
/// count; higher means less redundant. Tokens are lowercase whitespace
/// splits. `None` when every paragraph is shorter than `n` tokens.
pub fn rep_inter(paragraph_texts: &[String], n: usize) -> Option<f64> {
    assert!(n >= 1, "n-gram order must be at least 1");
    if paragraph_texts.is_empty() {
        return None;
    }
    let mut total = 0usize;
    let mut unique: HashSet<Vec<String>> = HashSet::new();
    for text in paragraph_texts {
        let tokens = whitespace_tokens(text);
        if tokens.len() < n {
            continue;
        }
        for window in tokens.windows(n) {
            total += 1;
            unique.insert(window.to_vec());
        }
    }
    if total == 0 {
        None
    } else {
        Some(unique.len() as f64 / total as f64)
    }
}

/// Per-instance scores kept alongside the averages.
#[derive(Debug, Clone, Serialize)]
pub struct InstanceMetrics {
    pub id: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Averaged evidence metrics plus redundancy of the selected paragraphs.
/// Serializes to exactly the documented JSON surface.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub evidence_f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub rep_inter_1: Option<f64>,
    pub rep_inter_2: Option<f64>,
    pub rep_inter_3: Option<f64>,
    pub rep_inter_mean: Option<f64>,
    pub n_instances: usize,
    #[serde(skip)]
    pub per_instance: Vec<InstanceMetrics>,
}

impl MetricReport {
    /// Score predictions (id, selected indices) against gold instances.
    /// Every prediction must name a known instance id.
    pub fn compute(
        predictions: &[(String, Vec<usize>)],
        instances: &[Instance],
    ) -> Result<MetricReport> {
        let by_id: HashMap<&str, &Instance> = instances
            .iter()
            .map(|inst| (inst.id.as_str(), inst))
            .collect();
        let mut per_instance = Vec::with_capacity(predictions.len());
        let mut sums = (0.0, 0.0, 0.0);
        let mut rep_sums = [(0.0, 0usize); 3];
        for (id, indices) in predictions {
            let instance = by_id.get(id.as_str()).ok_or_else(|| Error::Predictions {
                path: String::new(),
                message: format!("prediction for unknown instance id {id:?}"),
            })?;
            let pred: BTreeSet<usize> = indices.iter().copied().collect();
            if let Some(&bad) = pred.iter().find(|&&j| j >= instance.document.len()) {
                return Err(Error::Predictions {
                    path: String::new(),
                    message: format!(
                        "instance {id:?}: paragraph index {bad} out of range ({} paragraphs)",
                        instance.document.len()
                    ),
                });
            }
            let (p, r, f1) = evidence_f1(&pred, &instance.evidence);
            sums.0 += p;
            sums.1 += r;
            sums.2 += f1;
            per_instance.push(InstanceMetrics {
                id: id.clone(),
                precision: p,
                recall: r,
                f1,
            });
            let texts: Vec<String> = pred
                .iter()
                .map(|&j| instance.document.paragraph_text(j))
                .collect();
            for (slot, n) in (1..=3).enumerate() {
                if let Some(score) = rep_inter(&texts, n) {
                    rep_sums[slot].0 += score;
                    rep_sums[slot].1 += 1;
                }
            }
        }
        let count = predictions.len();
        let avg = |x: f64| if count == 0 { 0.0 } else { x / count as f64 };
        let rep = |slot: usize| -> Option<f64> {
            let (sum, n) = rep_sums[slot];
            (n > 0).then(|| sum / n as f64)
        };
        let reps: Vec<f64> = (0..3).filter_map(rep).collect();
        let rep_mean = (!reps.is_empty()).then(|| reps.iter().sum::<f64>() / reps.len() as f64);
        Ok(MetricReport {
            evidence_f1: avg(sums.2),
            precision: avg(sums.0),
            recall: avg(sums.1),
            rep_inter_1: rep(0),
            rep_inter_2: rep(1),
            rep_inter_3: rep(2),
            rep_inter_mean: rep_mean,
            n_instances: count,
            per_instance,
        })
    }
}
