//! Synthetic long-document corpora for desk-scale experiments.
//!
//! Every instance asks about two keywords. Evidence paragraph A sits in
//! segment 0 and carries both keywords plus a marker key token; evidence
//! paragraph B carries only that key. In cross-segment mode B lands in the
//! next segment, wrapped in exactly the same sentence template as several
//! decoy paragraphs that differ from it only in their key token — one of
//! them planted in B's own segment — so B cannot be recognized from its
//! own text or its segment: the key identity has to be carried over the
//! segment boundary. Distractors share the surface vocabulary and
//! sometimes a stray keyword. Duplicate injection plants an exact copy of
//! A in a later segment, labeled 0.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::pipeline::data::DatasetRecord;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub documents: usize,
    pub paragraphs_per_doc: usize,
    /// Segment size the corpus is built against (placement guarantee).
    pub n_seg: usize,
    /// Spread the two gold paragraphs across >= 2 segments.
    pub cross_segment: bool,
    /// Probability of planting an exact duplicate of evidence A.
    pub duplicate_rate: f64,
    /// Filler vocabulary size.
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            documents: 100,
            paragraphs_per_doc: 12,
            n_seg: 4,
            cross_segment: true,
            duplicate_rate: 0.0,
            vocab_size: 60,
            seed: 7,
        }
    }
}

const KEYWORDS: usize = 16;
/// Shared key alphabet: the same marker text is gold in documents whose
/// segment 0 links its key and a distractor everywhere else, so the match
/// cannot be read off the text.
const KEYS: usize = 12;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.documents == 0 {
            return Err(Error::CorpusSpec("documents must be positive".into()));
        }
        if self.n_seg == 0 {
            return Err(Error::CorpusSpec("n_seg must be positive".into()));
        }
        if self.paragraphs_per_doc < 2 {
            return Err(Error::CorpusSpec(
                "need at least 2 paragraphs for 2 evidence paragraphs".into(),
            ));
        }
        if self.cross_segment && self.paragraphs_per_doc < self.n_seg + 2 {
            return Err(Error::CorpusSpec(format!(
                "cross-segment mode needs at least n_seg + 2 = {} paragraphs, got {}",
                self.n_seg + 2,
                self.paragraphs_per_doc
            )));
        }
        if !(0.0..=1.0).contains(&self.duplicate_rate) {
            return Err(Error::CorpusSpec(format!(
                "duplicate_rate must lie in [0,1], got {}",
                self.duplicate_rate
            )));
        }
        if self.vocab_size < 10 {
            return Err(Error::CorpusSpec("vocab_size must be at least 10".into()));
        }
        Ok(())
    }
}

fn filler(rng: &mut ChaCha20Rng, vocab_size: usize) -> String {
    format!("w{}", rng.random_range(0..vocab_size))
}

fn filler_run(rng: &mut ChaCha20Rng, vocab_size: usize, len: usize) -> String {
    (0..len)
        .map(|_| filler(rng, vocab_size))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Deterministic corpus from spec + seed.
pub fn generate_corpus(spec: &SyntheticSpec) -> Result<Vec<DatasetRecord>> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut records = Vec::with_capacity(spec.documents);
    for doc_idx in 0..spec.documents {
        let kw_a = rng.random_range(0..KEYWORDS);
        let kw_b = {
            let mut k = rng.random_range(0..KEYWORDS - 1);
            if k >= kw_a {
                k += 1;
            }
            k
        };
        let key = rng.random_range(0..KEYS);
        let (kw_a, kw_b, key) = (format!("kw{kw_a}"), format!("kw{kw_b}"), format!("key{key}"));
        let question = format!("which parts mention {kw_a} and {kw_b}");

        let p = spec.paragraphs_per_doc;
        let first_segment = spec.n_seg.min(p);
        let pos_a = rng.random_range(0..first_segment);
        // In cross-segment mode B sits in the segment right after A's: the
        // bank and memory carry the key exactly one boundary.
        let second_segment_end = (2 * spec.n_seg).min(p);
        let pos_b = if spec.cross_segment {
            rng.random_range(spec.n_seg..second_segment_end)
        } else {
            // Same-document placement anywhere else; B also carries the
            // keywords, so it stays locally identifiable.
            let mut b = rng.random_range(0..p - 1);
            if b >= pos_a {
                b += 1;
            }
            b
        };

        let evidence_a = vec![
            format!("the topic {kw_a} and {kw_b} appears near marker {key}."),
            format!("marker {key} {key} {key}."),
        ];
        // One shared template for the key-bearing paragraphs, a pure
        // function of the key: B and its decoys differ only in the key
        // token, and the very same text carries label 1 in documents whose
        // segment-0 paragraph links that key and 0 everywhere else. Text
        // memorization cannot solve it. The key is repeated so that it
        // dominates the pooled node representations on both ends of the
        // cross-segment match.
        let marker_paragraph = |k: &str| {
            vec![
                format!("marker {k} {k} {k}."),
                format!("marker {k} {k} continues."),
            ]
        };
        let evidence_b = if spec.cross_segment {
            marker_paragraph(&key)
        } else {
            vec![
                format!("more detail on {kw_a} and {kw_b} here."),
                format!("{}.", filler_run(&mut rng, spec.vocab_size, 3)),
            ]
        };

        // Optional exact duplicate of A in a strictly later segment.
        let dup_pos = if spec.duplicate_rate > 0.0
            && rng.random::<f64>() < spec.duplicate_rate
            && p > spec.n_seg
        {
            let candidates: Vec<usize> = (spec.n_seg..p).filter(|&i| i != pos_b).collect();
            candidates.choose(&mut rng).copied()
        } else {
            None
        };

        // Decoy paragraphs: same template, never the linked key. In
        // cross-segment mode the first decoy is forced into B's segment so
        // "marker paragraph in the second segment" never identifies B.
        let key_idx: usize = key[3..].parse().unwrap();
        let mut decoy_keys: Vec<usize> = (0..KEYS).filter(|&k| k != key_idx).collect();
        decoy_keys.shuffle(&mut rng);
        let decoy_count = if spec.cross_segment { 3 } else { 2 };
        let mut decoy_positions: Vec<usize> = Vec::new();
        if spec.cross_segment {
            let in_b_segment: Vec<usize> = (spec.n_seg..second_segment_end)
                .filter(|&i| i != pos_b && Some(i) != dup_pos)
                .collect();
            if let Some(&forced) = in_b_segment.choose(&mut rng) {
                decoy_positions.push(forced);
            }
        }
        let mut remaining: Vec<usize> = (first_segment..p)
            .filter(|&i| i != pos_b && Some(i) != dup_pos && !decoy_positions.contains(&i))
            .collect();
        remaining.shuffle(&mut rng);
        while decoy_positions.len() < decoy_count {
            match remaining.pop() {
                Some(pos) => decoy_positions.push(pos),
                None => break,
            }
        }
        decoy_positions.sort_unstable();

        let mut paragraphs = Vec::with_capacity(p);
        for i in 0..p {
            if i == pos_a {
                paragraphs.push(evidence_a.clone());
            } else if i == pos_b {
                paragraphs.push(evidence_b.clone());
            } else if Some(i) == dup_pos {
                paragraphs.push(evidence_a.clone());
            } else if let Some(slot) = decoy_positions.iter().position(|&d| d == i) {
                let decoy = format!("key{}", decoy_keys[slot % decoy_keys.len()]);
                paragraphs.push(marker_paragraph(&decoy));
            } else {
                let run_len = rng.random_range(3..6);
                let mut sentences = vec![format!(
                    "{}.",
                    filler_run(&mut rng, spec.vocab_size, run_len)
                )];
                if rng.random::<f64>() < 0.3 {
                    let stray = format!("kw{}", rng.random_range(0..KEYWORDS));
                    sentences.push(format!(
                        "{} {stray} {}.",
                        filler(&mut rng, spec.vocab_size),
                        filler(&mut rng, spec.vocab_size)
                    ));
                }
                paragraphs.push(sentences);
            }
        }

        let mut evidence = vec![pos_a, pos_b];
        evidence.sort_unstable();
        records.push(DatasetRecord {
            id: format!("syn{doc_idx}"),
            question,
            paragraphs,
            evidence,
            answer: format!("{kw_a} {kw_b}"),
        });
    }
    Ok(records)
}

/// Render as the JSONL dataset format.
pub fn corpus_to_jsonl(records: &[DatasetRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}
