//! Per-segment graph over token, sentence, paragraph and segment nodes.
//!
//! Edges are unidirectional, lower level into the neighboring higher one
//! (token -> sentence -> paragraph -> segment), plus a self-loop on every
//! attention target. Same-level interaction is a BiLSTM applied once at
//! initialization; cross-level flow is multi-hop masked graph attention
//! with synchronous (per-hop) updates, so one hop moves information up
//! exactly one level.

use crate::blocks::{
    bilstm, fuse_residual, multi_head_attention, BiLstmParams, FuseParams, MhaParams,
};
use crate::encoder::SegmentEncoding;
use crate::numerics::{Mask, Value};
use crate::{Error, Result};

/// Node states of one segment's graph plus the index structure of its
/// edges. Values are cheap to clone (shared storage).
#[derive(Clone)]
pub struct LocalGraph {
    /// [T, d] question-aware paragraph-token states, text order.
    pub token_nodes: Value,
    /// [S, d]
    pub sentence_nodes: Value,
    /// [P, d]
    pub paragraph_nodes: Value,
    /// [1, d]
    pub segment_node: Value,
    /// Token-node indices of each sentence (the edge set token->sentence).
    pub sentence_token_groups: Vec<Vec<usize>>,
    /// Containing paragraph of each sentence (the edge set sentence->paragraph).
    pub sentence_paragraph: Vec<usize>,
}

impl LocalGraph {
    pub fn paragraphs(&self) -> usize {
        self.paragraph_nodes.shape()[0]
    }

    pub fn sentences(&self) -> usize {
        self.sentence_nodes.shape()[0]
    }

    pub fn tokens(&self) -> usize {
        self.token_nodes.shape()[0]
    }

    /// Sentence indices grouped by paragraph, for the sentence->paragraph
    /// attention mask.
    pub fn paragraph_sentence_groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.paragraphs()];
        for (s, &p) in self.sentence_paragraph.iter().enumerate() {
            groups[p].push(s);
        }
        groups
    }
}

/// Same-level BiLSTM plus residual fusion (one set per level).
pub struct LevelInteractParams {
    pub lstm: BiLstmParams,
    pub fuse: FuseParams,
}

/// Attention and fusion parameters of one level pair within one hop.
pub struct GatPair {
    pub mha: MhaParams,
    pub fuse: FuseParams,
}

/// Per-hop graph-attention parameters, one [`GatPair`] per level pair.
/// Hops do not share parameters.
pub struct GatParams {
    pub token_to_sentence: GatPair,
    pub sentence_to_paragraph: GatPair,
    pub paragraph_to_segment: GatPair,
}

/// Node initialization from the segment encoding: token nodes are the
/// hidden states at paragraph-token positions, sentence nodes mean-pool
/// their tokens, paragraph nodes read the anchor position, and the segment
/// node mean-pools the paragraph nodes.
pub fn init_local_graph(enc: &SegmentEncoding) -> Result<LocalGraph> {
    let pairs = enc.paragraphs();
    let len = enc.pair_len;
    let d = enc.d_h;
    let flat = enc.hidden.reshape(vec![pairs * len, d]);

    let mut token_flat_idx = Vec::new();
    let mut node_of_position = vec![usize::MAX; pairs * len];
    for (p, positions) in enc.paragraph_token_positions.iter().enumerate() {
        for &pos in positions {
            node_of_position[p * len + pos] = token_flat_idx.len();
            token_flat_idx.push(p * len + pos);
        }
    }
    let token_nodes = flat.gather_rows(&token_flat_idx)?;

    let mut sentence_token_groups = Vec::with_capacity(enc.sentences.len());
    let mut sentence_paragraph = Vec::with_capacity(enc.sentences.len());
    for (s, span) in enc.sentences.iter().enumerate() {
        let group: Vec<usize> = span
            .positions
            .iter()
            .map(|&pos| node_of_position[span.paragraph * len + pos])
            .collect();
        if group.is_empty() || group.contains(&usize::MAX) {
            return Err(Error::EmptySentence {
                sentence: s,
                paragraph: span.paragraph,
            });
        }
        sentence_token_groups.push(group);
        sentence_paragraph.push(span.paragraph);
    }
    let sentence_nodes = if sentence_token_groups.is_empty() {
        Value::constant(crate::numerics::Tensor::zeros(vec![0, d]))
    } else {
        token_nodes.pool_mean(&sentence_token_groups)?
    };

    let anchor_idx: Vec<usize> = enc
        .anchor_positions
        .iter()
        .enumerate()
        .map(|(p, &pos)| p * len + pos)
        .collect();
    let paragraph_nodes = flat.gather_rows(&anchor_idx)?;
    let segment_node = paragraph_nodes.pool_mean(&[(0..pairs).collect()])?;

    Ok(LocalGraph {
        token_nodes,
        sentence_nodes,
        paragraph_nodes,
        segment_node,
        sentence_token_groups,
        sentence_paragraph,
    })
}

/// BiLSTM over same-level nodes in text order, fused with the input by a
/// residual feed-forward layer. With zero-initialized parameters this is
/// the identity. Empty levels pass through.
pub fn level_interact(nodes: &Value, params: &LevelInteractParams) -> Result<Value> {
    if nodes.shape()[0] == 0 {
        return Ok(nodes.clone());
    }
    let states = bilstm(nodes, &params.lstm)?;
    fuse_residual(&states, nodes, &params.fuse)
}

/// One masked attention step into `targets`: each target row attends over
/// its member source rows plus itself, then the attended vector is fused
/// with the previous target state.
fn gat_attend(
    targets: &Value,
    sources: &Value,
    membership: &[Vec<usize>],
    pair: &GatPair,
) -> Result<Value> {
    let t = targets.shape()[0];
    let s = sources.shape()[0];
    let kv = if s == 0 {
        targets.clone()
    } else {
        Value::concat_rows(&[sources.clone(), targets.clone()])?
    };
    let mut mask = Mask::none_allowed(t, s + t);
    for (j, members) in membership.iter().enumerate() {
        for &i in members {
            mask.allow(j, i);
        }
    }
    for j in 0..t {
        mask.allow(j, s + j);
    }
    let attended = multi_head_attention(targets, &kv, Some(&mask), &pair.mha)?;
    fuse_residual(&attended, targets, &pair.fuse)
}

/// One synchronous hop: sentence, paragraph and segment nodes each attend
/// over their pre-hop in-neighbors (plus self); token nodes are source-only
/// and pass through unchanged.
pub fn local_gat_hop(g: &LocalGraph, params: &GatParams) -> Result<LocalGraph> {
    let sentence_nodes = if g.sentences() == 0 {
        g.sentence_nodes.clone()
    } else {
        gat_attend(
            &g.sentence_nodes,
            &g.token_nodes,
            &g.sentence_token_groups,
            &params.token_to_sentence,
        )?
    };
    let paragraph_nodes = gat_attend(
        &g.paragraph_nodes,
        &g.sentence_nodes,
        &g.paragraph_sentence_groups(),
        &params.sentence_to_paragraph,
    )?;
    let segment_node = gat_attend(
        &g.segment_node,
        &g.paragraph_nodes,
        &[(0..g.paragraphs()).collect()],
        &params.paragraph_to_segment,
    )?;
    Ok(LocalGraph {
        token_nodes: g.token_nodes.clone(),
        sentence_nodes,
        paragraph_nodes,
        segment_node,
        sentence_token_groups: g.sentence_token_groups.clone(),
        sentence_paragraph: g.sentence_paragraph.clone(),
    })
}

/// Apply the configured number of hops with per-hop parameters. Zero hops
/// leave the graph unchanged.
pub fn run_local_hops(g: &LocalGraph, hops: &[GatParams]) -> Result<LocalGraph> {
    let mut current = g.clone();
    for hop in hops {
        current = local_gat_hop(&current, hop)?;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::test_support::{const_mat, mha, pseudo};
    use crate::encoder::{encode_segment, ParagraphAnchor, Vocabulary};
    use crate::numerics::Tensor;

    fn enc_params(v: &Vocabulary, d_w: usize, d_h: usize, max_len: usize) -> crate::encoder::EncoderParams {
        crate::encoder::EncoderParams {
            embed: const_mat(1, v.size(), d_w),
            pos: const_mat(2, max_len, d_w),
            proj_w: const_mat(3, d_w, d_h),
            proj_b: const_mat(4, 1, d_h),
            layers: vec![],
            d_w,
            d_h,
            max_pair_len: max_len,
        }
    }

    fn gat_pair(seed: u64, heads: usize, d: usize) -> GatPair {
        GatPair {
            mha: mha(seed, heads, d, d / heads),
            fuse: FuseParams {
                w: const_mat(seed + 100, 2 * d, d),
                b: const_mat(seed + 101, 1, d),
            },
        }
    }

    fn hop_params(seed: u64, heads: usize, d: usize) -> GatParams {
        GatParams {
            token_to_sentence: gat_pair(seed, heads, d),
            sentence_to_paragraph: gat_pair(seed + 1000, heads, d),
            paragraph_to_segment: gat_pair(seed + 2000, heads, d),
        }
    }

    fn micro_graph(seed: u64, tokens: usize, d: usize, groups: Vec<Vec<usize>>, sent_para: Vec<usize>, paragraphs: usize) -> LocalGraph {
        let token_nodes = const_mat(seed, tokens, d);
        let sentence_nodes = const_mat(seed + 1, groups.len(), d);
        let paragraph_nodes = const_mat(seed + 2, paragraphs, d);
        let segment_node = const_mat(seed + 3, 1, d);
        LocalGraph {
            token_nodes,
            sentence_nodes,
            paragraph_nodes,
            segment_node,
            sentence_token_groups: groups,
            sentence_paragraph: sent_para,
        }
    }

    #[test]
    fn sentence_node_is_mean_of_its_two_tokens() {
        let v = Vocabulary::build(["a b q"], 1).unwrap();
        let params = enc_params(&v, 3, 5, 8);
        let enc = encode_segment("q", &[vec!["a b".to_string()]], &v, &params, ParagraphAnchor::Cls)
            .unwrap();
        let g = init_local_graph(&enc).unwrap();
        assert_eq!(g.tokens(), 2);
        assert_eq!(g.sentences(), 1);
        for j in 0..5 {
            let mean = (g.token_nodes.tensor().get2(0, j) + g.token_nodes.tensor().get2(1, j)) / 2.0;
            assert!((g.sentence_nodes.tensor().get2(0, j) - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_paragraphs_make_segment_node_equal_paragraph_node() {
        let v = Vocabulary::build(["a b q"], 1).unwrap();
        let params = enc_params(&v, 3, 5, 8);
        let paragraphs: Vec<Vec<String>> = (0..4).map(|_| vec!["a b".to_string()]).collect();
        let enc = encode_segment("q", &paragraphs, &v, &params, ParagraphAnchor::Cls).unwrap();
        let g = init_local_graph(&enc).unwrap();
        for j in 0..5 {
            let diff = g.segment_node.tensor().get2(0, j) - g.paragraph_nodes.tensor().get2(0, j);
            assert!(diff.abs() < 1e-12);
        }
    }

    #[test]
    fn segment_node_matches_hand_pooled_anchor_states() {
        let v = Vocabulary::build(["a b c d q"], 1).unwrap();
        let params = enc_params(&v, 4, 6, 10);
        let paragraphs = vec![
            vec!["a b.".to_string()],
            vec!["c d.".to_string()],
            vec!["a d.".to_string()],
        ];
        let enc = encode_segment("q", &paragraphs, &v, &params, ParagraphAnchor::Cls).unwrap();
        let g = init_local_graph(&enc).unwrap();
        // Recompute the pooling directly from the encoding.
        let len = enc.pair_len;
        let flat = enc.hidden.reshape(vec![3 * len, 6]);
        for j in 0..6 {
            let mut mean = 0.0;
            for p in 0..3 {
                mean += flat.tensor().get2(p * len + enc.anchor_positions[p], j);
            }
            mean /= 3.0;
            assert!((g.segment_node.tensor().get2(0, j) - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn level_interact_with_zero_params_is_identity() {
        let d = 6;
        let nodes = const_mat(9, 4, d);
        let params = LevelInteractParams {
            lstm: BiLstmParams {
                fwd: crate::blocks::LstmDir {
                    w_x: Value::constant(Tensor::zeros(vec![d, 4 * (d / 2)])),
                    w_h: Value::constant(Tensor::zeros(vec![d / 2, 4 * (d / 2)])),
                    b: Value::constant(Tensor::zeros(vec![1, 4 * (d / 2)])),
                },
                bwd: crate::blocks::LstmDir {
                    w_x: Value::constant(Tensor::zeros(vec![d, 4 * (d / 2)])),
                    w_h: Value::constant(Tensor::zeros(vec![d / 2, 4 * (d / 2)])),
                    b: Value::constant(Tensor::zeros(vec![1, 4 * (d / 2)])),
                },
                hidden: d / 2,
            },
            fuse: FuseParams {
                w: Value::constant(Tensor::zeros(vec![2 * d, d])),
                b: Value::constant(Tensor::zeros(vec![1, d])),
            },
        };
        let out = level_interact(&nodes, &params).unwrap();
        assert_eq!(out.data(), nodes.data());
    }

    #[test]
    fn zero_hops_leave_graph_unchanged() {
        let g = micro_graph(30, 4, 8, vec![vec![0, 1], vec![2, 3]], vec![0, 0], 1);
        let out = run_local_hops(&g, &[]).unwrap();
        assert!(out.sentence_nodes.tensor().bits_eq(g.sentence_nodes.tensor()));
        assert!(out.segment_node.tensor().bits_eq(g.segment_node.tensor()));
    }

    /// Brute-force dense re-evaluation: full score matrix over
    /// [sources; targets], -inf outside the neighborhood, explicit softmax,
    /// per-head weighted value sums, concat, then the fusion layer.
    fn dense_oracle(
        targets: &Value,
        sources: &Value,
        membership: &[Vec<usize>],
        pair: &GatPair,
    ) -> Vec<Vec<f64>> {
        let t = targets.shape()[0];
        let s = sources.shape()[0];
        let d = targets.shape()[1];
        let d_z = pair.mha.d_z;
        let node = |i: usize, j: usize| -> f64 {
            if i < s {
                sources.tensor().get2(i, j)
            } else {
                targets.tensor().get2(i - s, j)
            }
        };
        let mut concat = vec![vec![0.0; pair.mha.heads.len() * d_z]; t];
        for (h_idx, head) in pair.mha.heads.iter().enumerate() {
            let proj = |w: &Value, row: &dyn Fn(usize) -> f64, j: usize| -> f64 {
                (0..d).map(|k| row(k) * w.tensor().get2(k, j)).sum()
            };
            for j in 0..t {
                // Full dense score row with -inf outside N_j.
                let mut scores = vec![f64::NEG_INFINITY; s + t];
                for i in 0..s + t {
                    let in_hood = (i < s && membership[j].contains(&i)) || i == s + j;
                    if !in_hood {
                        continue;
                    }
                    let mut dot = 0.0;
                    for z in 0..d_z {
                        let qj = proj(&head.wq, &|k| targets.tensor().get2(j, k), z);
                        let ki = proj(&head.wk, &|k| node(i, k), z);
                        dot += qj * ki;
                    }
                    scores[i] = dot / (d_z as f64).sqrt();
                }
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores
                    .iter()
                    .map(|&x| if x == f64::NEG_INFINITY { 0.0 } else { (x - mx).exp() })
                    .collect();
                let denom: f64 = exps.iter().sum();
                for z in 0..d_z {
                    let mut out = 0.0;
                    for i in 0..s + t {
                        if exps[i] > 0.0 {
                            out += exps[i] / denom * proj(&head.wv, &|k| node(i, k), z);
                        }
                    }
                    concat[j][h_idx * d_z + z] = out;
                }
            }
        }
        // Fusion: tanh([att; prev] W + b) + prev.
        let w = &pair.fuse.w;
        let b = &pair.fuse.b;
        let mut fused = vec![vec![0.0; d]; t];
        for j in 0..t {
            for col in 0..d {
                let mut sum = b.tensor().get2(0, col);
                for k in 0..d {
                    sum += concat[j][k] * w.tensor().get2(k, col);
                    sum += targets.tensor().get2(j, k) * w.tensor().get2(d + k, col);
                }
                fused[j][col] = sum.tanh() + targets.tensor().get2(j, col);
            }
        }
        fused
    }

    #[test]
    fn hop_matches_dense_attention_oracle() {
        // 4 tokens / 2 sentences / 1 paragraph micro-graph, 2 heads.
        let d = 8;
        let g = micro_graph(40, 4, d, vec![vec![0, 1], vec![2, 3]], vec![0, 0], 1);
        let params = hop_params(41, 2, d);
        let out = local_gat_hop(&g, &params).unwrap();

        let expected_sent = dense_oracle(
            &g.sentence_nodes,
            &g.token_nodes,
            &g.sentence_token_groups,
            &params.token_to_sentence,
        );
        for j in 0..2 {
            for c in 0..d {
                let got = out.sentence_nodes.tensor().get2(j, c);
                assert!(
                    (got - expected_sent[j][c]).abs() < 1e-9,
                    "sentence {j},{c}: {got} vs {}",
                    expected_sent[j][c]
                );
            }
        }
        let expected_para = dense_oracle(
            &g.paragraph_nodes,
            &g.sentence_nodes,
            &g.paragraph_sentence_groups(),
            &params.sentence_to_paragraph,
        );
        for c in 0..d {
            let got = out.paragraph_nodes.tensor().get2(0, c);
            assert!((got - expected_para[0][c]).abs() < 1e-9);
        }
        let expected_seg = dense_oracle(
            &g.segment_node,
            &g.paragraph_nodes,
            &[vec![0]],
            &params.paragraph_to_segment,
        );
        for c in 0..d {
            let got = out.segment_node.tensor().get2(0, c);
            assert!((got - expected_seg[0][c]).abs() < 1e-9);
        }
    }

    #[test]
    fn target_with_only_self_loop_matches_oracle() {
        // A paragraph with no sentences attends only to itself.
        let d = 6;
        let g = micro_graph(60, 2, d, vec![vec![0, 1]], vec![0], 2);
        let params = hop_params(61, 2, d);
        let out = local_gat_hop(&g, &params).unwrap();
        // Paragraph 1 has no sentences: neighborhood = {self}.
        let expected = dense_oracle(
            &g.paragraph_nodes,
            &g.sentence_nodes,
            &g.paragraph_sentence_groups(),
            &params.sentence_to_paragraph,
        );
        for c in 0..d {
            assert!((out.paragraph_nodes.tensor().get2(1, c) - expected[1][c]).abs() < 1e-12);
        }
    }

    #[test]
    fn segment_perturbation_never_reaches_lower_levels() {
        let d = 8;
        let g = micro_graph(70, 5, d, vec![vec![0, 1, 2], vec![3, 4]], vec![0, 1], 2);
        let params = hop_params(71, 2, d);
        let out1 = local_gat_hop(&g, &params).unwrap();

        let mut perturbed = g.clone();
        perturbed.segment_node = g.segment_node.affine(1.0, 5.0);
        let out2 = local_gat_hop(&perturbed, &params).unwrap();

        assert!(out1.token_nodes.tensor().bits_eq(out2.token_nodes.tensor()));
        assert!(out1
            .sentence_nodes
            .tensor()
            .bits_eq(out2.sentence_nodes.tensor()));
        assert!(out1
            .paragraph_nodes
            .tensor()
            .bits_eq(out2.paragraph_nodes.tensor()));
    }

    #[test]
    fn token_perturbation_spreads_one_level_per_hop() {
        let d = 8;
        // Two paragraphs, two sentences each: sentences 0,1 -> paragraph 0,
        // sentences 2,3 -> paragraph 1. Token 0 belongs to sentence 0.
        let g = micro_graph(
            80,
            8,
            d,
            vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7]],
            vec![0, 0, 1, 1],
            2,
        );
        let params = hop_params(81, 2, d);

        let mut perturbed = g.clone();
        let mut tok = perturbed.token_nodes.data().to_vec();
        tok[0] += 1.0;
        perturbed.token_nodes = Value::constant(Tensor::new(vec![8, d], tok));

        let a1 = local_gat_hop(&g, &params).unwrap();
        let b1 = local_gat_hop(&perturbed, &params).unwrap();
        // After one hop only sentence 0 differs among sentence nodes...
        let changed: Vec<usize> = (0..4)
            .filter(|&s| {
                (0..d).any(|c| {
                    a1.sentence_nodes.tensor().get2(s, c) != b1.sentence_nodes.tensor().get2(s, c)
                })
            })
            .collect();
        assert_eq!(changed, vec![0]);
        // ...and no paragraph node has moved yet.
        assert!(a1
            .paragraph_nodes
            .tensor()
            .bits_eq(b1.paragraph_nodes.tensor()));

        let a2 = local_gat_hop(&a1, &params).unwrap();
        let b2 = local_gat_hop(&b1, &params).unwrap();
        let changed_para: Vec<usize> = (0..2)
            .filter(|&p| {
                (0..d).any(|c| {
                    a2.paragraph_nodes.tensor().get2(p, c) != b2.paragraph_nodes.tensor().get2(p, c)
                })
            })
            .collect();
        assert_eq!(changed_para, vec![0]);
    }

    #[test]
    fn attention_weights_per_target_sum_to_one() {
        let d = 8;
        let g = micro_graph(90, 4, d, vec![vec![0, 1], vec![2, 3]], vec![0, 0], 1);
        let params = hop_params(91, 2, d);
        // Recreate the hop's mask and inspect weights for every head.
        let kv = Value::concat_rows(&[g.token_nodes.clone(), g.sentence_nodes.clone()]).unwrap();
        let mut mask = Mask::none_allowed(2, 6);
        for (j, members) in g.sentence_token_groups.iter().enumerate() {
            for &i in members {
                mask.allow(j, i);
            }
            mask.allow(j, 4 + j);
        }
        for head in &params.token_to_sentence.mha.heads {
            let alpha = crate::blocks::attention_weights(
                &g.sentence_nodes,
                &kv,
                Some(&mask),
                head,
                params.token_to_sentence.mha.d_z,
            )
            .unwrap();
            for j in 0..2 {
                let sum: f64 = (0..6).map(|i| alpha.tensor().get2(j, i)).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }
}
