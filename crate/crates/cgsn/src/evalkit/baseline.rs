//! Lexical sanity baseline: rank paragraphs by question-token overlap.

use std::collections::{BTreeSet, HashSet};

use crate::encoder::tokenize;
use crate::pipeline::data::Instance;

/// Top-k paragraphs by the number of distinct question tokens they
/// contain; ties go to the lower index. `k >= n` selects everything.
pub fn lexical_baseline(instance: &Instance, k: usize) -> BTreeSet<usize> {
    assert!(k >= 1, "k must be at least 1");
    let question_tokens: HashSet<String> = tokenize(&instance.question).into_iter().collect();
    let mut scored: Vec<(usize, usize)> = instance
        .document
        .paragraphs
        .iter()
        .enumerate()
        .map(|(i, sentences)| {
            let paragraph_tokens: HashSet<String> = sentences
                .iter()
                .flat_map(|s| tokenize(s))
                .collect();
            let overlap = question_tokens
                .iter()
                .filter(|t| paragraph_tokens.contains(*t))
                .count();
            (i, overlap)
        })
        .collect();
    scored.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.into_iter().take(k).map(|(i, _)| i).collect()
}
