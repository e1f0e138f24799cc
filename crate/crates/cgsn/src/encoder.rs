//! Tokenization, vocabulary, and the toy contextual encoder that produces
//! question-aware hidden states for each question-paragraph pair.
//!
//! The encoder is deliberately small — embedding lookup plus position
//! embeddings and a configurable number of full (bidirectional-context)
//! self-attention layers — and is substitutable: downstream modules consume
//! only the [`SegmentEncoding`] it returns.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blocks::{fuse_residual, multi_head_attention, FuseParams, MhaParams};
use crate::numerics::{Mask, Value};
use crate::{Error, Result};

pub const CLS_ID: u32 = 0;
pub const SEP_ID: u32 = 1;
pub const PAD_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
pub const RESERVED_TOKENS: usize = 4;

/// Lowercase, split on whitespace, and split punctuation into single-char
/// tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_alphanumeric() {
            for lower in ch.to_lowercase() {
                current.push(lower);
            }
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Split raw text into sentences on `.`, `?`, `!`; terminators stay with
/// their sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        current.push(ch);
        if matches!(ch, '.' | '?' | '!') {
            if !current.trim().is_empty() {
                sentences.push(current.trim().to_string());
            }
            current.clear();
        }
    }
    if !current.trim().is_empty() {
        sentences.push(current.trim().to_string());
    }
    sentences
}

/// Token-to-id map with fixed reserved ids 0..3 for CLS/SEP/PAD/UNK.
/// Non-reserved ids are dense and assigned by descending corpus frequency,
/// ties broken lexicographically, so the same corpus always yields the
/// same mapping.
#[derive(Clone)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Result<Vocabulary> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in corpus {
            for tok in tokenize(line) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut entries: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_freq.max(1))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens: Vec<String> = entries.into_iter().map(|(t, _)| t).collect();
        Ok(Vocabulary::from_tokens(tokens))
    }

    pub fn from_tokens(tokens: Vec<String>) -> Vocabulary {
        let token_to_id = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), (i + RESERVED_TOKENS) as u32))
            .collect();
        Vocabulary {
            token_to_id,
            tokens,
        }
    }

    /// Id for a token, falling back to UNK.
    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Total id count including the four reserved ids.
    pub fn size(&self) -> usize {
        self.tokens.len() + RESERVED_TOKENS
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Vocabulary file body: one token per line, line i holding id i + 4.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_file_string(s: &str) -> Vocabulary {
        Vocabulary::from_tokens(s.lines().map(str::to_string).collect())
    }

    pub fn sha256_hex(&self) -> String {
        let digest = Sha256::digest(self.to_file_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Where the paragraph node reads its initialization from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParagraphAnchor {
    Cls,
    LastSep,
}

/// `[CLS] q [SEP] p [SEP]` padded to `max_len`; the paragraph is truncated
/// from the right to fit, the question never is.
pub fn format_pair(
    question: &[String],
    paragraph: &[String],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<u32>> {
    if question.is_empty() {
        return Err(Error::EmptyQuestion);
    }
    let budget = max_len.saturating_sub(3);
    if question.len() > budget {
        return Err(Error::QuestionTooLong {
            question_tokens: question.len(),
            budget,
            max_len,
        });
    }
    let p_budget = budget - question.len();
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    ids.extend(question.iter().map(|t| vocab.id(t)));
    ids.push(SEP_ID);
    ids.extend(paragraph.iter().take(p_budget).map(|t| vocab.id(t)));
    ids.push(SEP_ID);
    ids.resize(max_len, PAD_ID);
    Ok(ids)
}

/// Encoder parameters as bound values for one pass.
pub struct EncoderParams {
    pub embed: Value,
    pub pos: Value,
    pub proj_w: Value,
    pub proj_b: Value,
    pub layers: Vec<EncoderLayer>,
    pub d_w: usize,
    pub d_h: usize,
    pub max_pair_len: usize,
}

pub struct EncoderLayer {
    pub mha: MhaParams,
    pub fuse: FuseParams,
}

/// Token positions (within one pair) of a sentence, with its paragraph.
#[derive(Debug, Clone)]
pub struct SentenceSpan {
    pub paragraph: usize,
    pub positions: Vec<usize>,
}

/// Question-aware hidden states for one segment plus the index structure
/// downstream graph construction needs. `hidden` is `[P, len, d_h]`.
pub struct SegmentEncoding {
    pub hidden: Value,
    pub pair_len: usize,
    pub d_h: usize,
    pub question_len: usize,
    pub pair_token_ids: Vec<Vec<u32>>,
    /// Per pair: in-pair positions of the kept paragraph tokens.
    pub paragraph_token_positions: Vec<Vec<usize>>,
    /// All sentences of the segment in text order.
    pub sentences: Vec<SentenceSpan>,
    pub cls_positions: Vec<usize>,
    pub anchor_positions: Vec<usize>,
}

impl SegmentEncoding {
    pub fn paragraphs(&self) -> usize {
        self.pair_token_ids.len()
    }

    /// (sentence index, paragraph index) per non-PAD paragraph token, keyed
    /// by (pair, in-pair position).
    pub fn token_map(&self) -> HashMap<(usize, usize), (usize, usize)> {
        let mut map = HashMap::new();
        for (s, span) in self.sentences.iter().enumerate() {
            for &pos in &span.positions {
                let prior = map.insert((span.paragraph, pos), (s, span.paragraph));
                debug_assert!(prior.is_none(), "token assigned to two sentences");
            }
        }
        map
    }
}

/// Encode up to `N_seg` paragraphs paired with the question. Paragraphs are
/// given as lists of raw sentence strings; empty sentences are dropped.
pub fn encode_segment(
    question: &str,
    paragraphs: &[Vec<String>],
    vocab: &Vocabulary,
    params: &EncoderParams,
    anchor: ParagraphAnchor,
) -> Result<SegmentEncoding> {
    if paragraphs.is_empty() {
        return Err(Error::EmptySegment);
    }
    let q_tokens = tokenize(question);
    let max_len = params.max_pair_len;

    let mut pair_token_ids = Vec::with_capacity(paragraphs.len());
    let mut paragraph_token_positions = Vec::with_capacity(paragraphs.len());
    let mut sentences = Vec::new();
    let mut cls_positions = Vec::with_capacity(paragraphs.len());
    let mut anchor_positions = Vec::with_capacity(paragraphs.len());
    let mut pair_hidden = Vec::with_capacity(paragraphs.len());

    for (p_idx, sentence_strs) in paragraphs.iter().enumerate() {
        let sentence_tokens: Vec<Vec<String>> = sentence_strs
            .iter()
            .map(|s| tokenize(s))
            .filter(|t| !t.is_empty())
            .collect();
        let flat: Vec<String> = sentence_tokens.iter().flatten().cloned().collect();
        let ids = format_pair(&q_tokens, &flat, vocab, max_len)?;
        // Kept paragraph tokens run from just after the first SEP to the
        // final SEP.
        let p_start = q_tokens.len() + 2;
        let p_kept = flat.len().min(max_len - 3 - q_tokens.len());
        let positions: Vec<usize> = (p_start..p_start + p_kept).collect();
        let last_sep = p_start + p_kept;

        // Sentence spans clipped by truncation; fully truncated sentences
        // vanish.
        let mut offset = 0;
        for toks in &sentence_tokens {
            let begin = offset;
            let end = offset + toks.len();
            offset = end;
            let kept_end = end.min(p_kept);
            if begin >= kept_end {
                continue;
            }
            sentences.push(SentenceSpan {
                paragraph: p_idx,
                positions: (p_start + begin..p_start + kept_end).collect(),
            });
        }

        cls_positions.push(0);
        anchor_positions.push(match anchor {
            ParagraphAnchor::Cls => 0,
            ParagraphAnchor::LastSep => last_sep,
        });

        // Embed + positions, project, then the attention layers with PAD
        // keys masked out.
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let emb = params.embed.gather_rows(&idx)?;
        let x = emb.add(&params.pos)?;
        let mut h = x.matmul(&params.proj_w)?.add_row(&params.proj_b)?.tanh();
        let non_pad = ids.iter().filter(|&&i| i != PAD_ID).count();
        let mut mask = Mask::none_allowed(max_len, max_len);
        for q in 0..max_len {
            for k in 0..non_pad {
                mask.allow(q, k);
            }
        }
        for layer in &params.layers {
            let attended = multi_head_attention(&h, &h, Some(&mask), &layer.mha)?;
            h = fuse_residual(&attended, &h, &layer.fuse)?;
        }
        pair_hidden.push(h);

        pair_token_ids.push(ids);
        paragraph_token_positions.push(positions);
    }

    let stacked = Value::concat_rows(&pair_hidden)?;
    let hidden = stacked.reshape(vec![paragraphs.len(), max_len, params.d_h]);

    Ok(SegmentEncoding {
        hidden,
        pair_len: max_len,
        d_h: params.d_h,
        question_len: q_tokens.len(),
        pair_token_ids,
        paragraph_token_positions,
        sentences,
        cls_positions,
        anchor_positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::test_support::{const_mat, mha};
    use crate::numerics::Tensor;

    fn toy_vocab() -> Vocabulary {
        Vocabulary::build(["a b", "b c"], 1).unwrap()
    }

    #[test]
    fn build_vocab_counts_reserved_ids() {
        let v = toy_vocab();
        assert_eq!(v.size(), 7);
        // b occurs twice so it takes the first free id.
        assert_eq!(v.id("b"), 4);
        assert!(v.id("a") > 3 && v.id("c") > 3);
    }

    #[test]
    fn unseen_token_maps_to_unk() {
        let v = toy_vocab();
        assert_eq!(v.id("zebra"), UNK_ID);
    }

    #[test]
    fn vocab_assignment_is_deterministic() {
        let a = Vocabulary::build(["x y z", "y z w", "q"], 1).unwrap();
        let b = Vocabulary::build(["x y z", "y z w", "q"], 1).unwrap();
        assert_eq!(a.to_file_string(), b.to_file_string());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(
            Vocabulary::build(std::iter::empty::<&str>(), 1),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = Vocabulary::build(["alpha beta gamma beta"], 1).unwrap();
        let reloaded = Vocabulary::from_file_string(&v.to_file_string());
        assert_eq!(v.tokens(), reloaded.tokens());
        assert_eq!(v.sha256_hex(), reloaded.sha256_hex());
    }

    #[test]
    fn tokenizer_lowercases_and_splits_punctuation() {
        assert_eq!(
            tokenize("Hello, World!"),
            vec!["hello", ",", "world", "!"]
        );
    }

    #[test]
    fn sentence_split_on_terminators() {
        assert_eq!(
            split_sentences("One two. Three? Four"),
            vec!["One two.", "Three?", "Four"]
        );
    }

    fn tok(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn format_pair_layout() {
        let v = toy_vocab();
        let ids = format_pair(&tok("a"), &tok("b"), &v, 6).unwrap();
        assert_eq!(ids, vec![CLS_ID, v.id("a"), SEP_ID, v.id("b"), SEP_ID, PAD_ID]);
    }

    #[test]
    fn format_pair_empty_paragraph_is_allowed() {
        let v = toy_vocab();
        let ids = format_pair(&tok("a b"), &[], &v, 7).unwrap();
        assert_eq!(
            ids,
            vec![CLS_ID, v.id("a"), v.id("b"), SEP_ID, SEP_ID, PAD_ID, PAD_ID]
        );
    }

    #[test]
    fn format_pair_truncates_paragraph_keeps_final_sep() {
        let v = toy_vocab();
        let ids = format_pair(&tok("a"), &tok("b c b c b"), &v, 6).unwrap();
        // Budget for the paragraph is 6 - 3 - 1 = 2 tokens.
        assert_eq!(ids, vec![CLS_ID, v.id("a"), SEP_ID, v.id("b"), v.id("c"), SEP_ID]);
    }

    #[test]
    fn format_pair_never_truncates_question() {
        let v = toy_vocab();
        let err = format_pair(&tok("a b c a"), &tok("b"), &v, 6).unwrap_err();
        assert!(matches!(err, Error::QuestionTooLong { .. }));
    }

    fn toy_params(vocab_size: usize, d_w: usize, d_h: usize, max_len: usize, depth: usize) -> EncoderParams {
        EncoderParams {
            embed: const_mat(1, vocab_size, d_w),
            pos: const_mat(2, max_len, d_w),
            proj_w: const_mat(3, d_w, d_h),
            proj_b: const_mat(4, 1, d_h),
            layers: (0..depth)
                .map(|l| EncoderLayer {
                    mha: mha(100 + l as u64, 2, d_h, d_h / 2),
                    fuse: crate::blocks::FuseParams {
                        w: const_mat(200 + l as u64, 2 * d_h, d_h),
                        b: const_mat(201 + l as u64, 1, d_h),
                    },
                })
                .collect(),
            d_w,
            d_h,
            max_pair_len: max_len,
        }
    }

    #[test]
    fn hidden_shape_matches_contract() {
        // 16 paragraphs at pair length 64 with d_h = 32 -> (16, 64, 32).
        let corpus = ["q w e r t y u i o p"];
        let v = Vocabulary::build(corpus, 1).unwrap();
        let params = toy_params(v.size(), 8, 32, 64, 1);
        let paragraphs: Vec<Vec<String>> = (0..16)
            .map(|i| vec![format!("w e r t token{i}.")])
            .collect();
        let enc = encode_segment("q w", &paragraphs, &v, &params, ParagraphAnchor::Cls).unwrap();
        assert_eq!(enc.hidden.shape(), &[16, 64, 32]);
        assert_eq!(enc.paragraphs(), 16);
    }

    #[test]
    fn encoding_is_deterministic() {
        let v = toy_vocab();
        let params = toy_params(v.size(), 4, 8, 12, 1);
        let paragraphs = vec![vec!["a b.".to_string()], vec!["c b.".to_string()]];
        let e1 = encode_segment("a c", &paragraphs, &v, &params, ParagraphAnchor::Cls).unwrap();
        let e2 = encode_segment("a c", &paragraphs, &v, &params, ParagraphAnchor::Cls).unwrap();
        assert!(e1.hidden.tensor().bits_eq(e2.hidden.tensor()));
    }

    #[test]
    fn zero_paragraphs_is_an_error() {
        let v = toy_vocab();
        let params = toy_params(v.size(), 4, 8, 12, 1);
        assert!(matches!(
            encode_segment("a", &[], &v, &params, ParagraphAnchor::Cls),
            Err(Error::EmptySegment)
        ));
    }

    #[test]
    fn two_token_pair_matches_hand_computed_forward() {
        // Depth-1 encoder on the tiniest pair, re-derived with plain loops.
        let v = toy_vocab();
        let d_w = 3;
        let d_h = 4;
        let max_len = 5; // [CLS] a [SEP] b [SEP]
        let params = toy_params(v.size(), d_w, d_h, max_len, 1);
        let enc = encode_segment(
            "a",
            &[vec!["b".to_string()]],
            &v,
            &params,
            ParagraphAnchor::Cls,
        )
        .unwrap();
        let got = enc.hidden.reshape(vec![max_len, d_h]);

        // Hand forward: x = embed[ids] + pos; h0 = tanh(x W + b);
        // per head: alpha = softmax(qk/sqrt(dz)) over all 5 non-PAD keys;
        // fuse = tanh([att; h0] Wf + bf) + h0.
        let ids = [
            CLS_ID as usize,
            v.id("a") as usize,
            SEP_ID as usize,
            v.id("b") as usize,
            SEP_ID as usize,
        ];
        let embed = params.embed.data();
        let pos = params.pos.data();
        let mut x = vec![0.0; max_len * d_w];
        for (t, &id) in ids.iter().enumerate() {
            for j in 0..d_w {
                x[t * d_w + j] = embed[id * d_w + j] + pos[t * d_w + j];
            }
        }
        let pw = params.proj_w.data();
        let pb = params.proj_b.data();
        let mut h0 = vec![0.0; max_len * d_h];
        for t in 0..max_len {
            for j in 0..d_h {
                let mut s = pb[j];
                for k in 0..d_w {
                    s += x[t * d_w + k] * pw[k * d_h + j];
                }
                h0[t * d_h + j] = s.tanh();
            }
        }
        let layer = &params.layers[0];
        let d_z = layer.mha.d_z;
        let mut att = vec![0.0; max_len * d_h];
        for (h_idx, head) in layer.mha.heads.iter().enumerate() {
            let (wq, wk, wv) = (head.wq.data(), head.wk.data(), head.wv.data());
            let proj = |w: &[f64], t: usize, j: usize| -> f64 {
                (0..d_h).map(|k| h0[t * d_h + k] * w[k * d_z + j]).sum()
            };
            for t in 0..max_len {
                let mut scores = vec![0.0; max_len];
                for s in 0..max_len {
                    let mut dot = 0.0;
                    for j in 0..d_z {
                        dot += proj(wq, t, j) * proj(wk, s, j);
                    }
                    scores[s] = dot / (d_z as f64).sqrt();
                }
                let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let denom: f64 = exps.iter().sum();
                for j in 0..d_z {
                    let mut out = 0.0;
                    for s in 0..max_len {
                        out += exps[s] / denom * proj(wv, s, j);
                    }
                    att[t * d_h + h_idx * d_z + j] = out;
                }
            }
        }
        let (fw, fb) = (layer.fuse.w.data(), layer.fuse.b.data());
        for t in 0..max_len {
            for j in 0..d_h {
                let mut s = fb[j];
                for k in 0..d_h {
                    s += att[t * d_h + k] * fw[k * d_h + j];
                    s += h0[t * d_h + k] * fw[(d_h + k) * d_h + j];
                }
                let expected = s.tanh() + h0[t * d_h + j];
                let actual = got.tensor().get2(t, j);
                assert!(
                    (expected - actual).abs() < 1e-12,
                    "t={t} j={j}: {expected} vs {actual}"
                );
            }
        }
    }

    #[test]
    fn pad_embeddings_never_leak_into_non_pad_positions() {
        let v = toy_vocab();
        let d_w = 4;
        let d_h = 8;
        let max_len = 10;
        let base = toy_params(v.size(), d_w, d_h, max_len, 2);

        // Same params but with the PAD embedding row replaced.
        let mut embed_data = base.embed.data().to_vec();
        for j in 0..d_w {
            embed_data[PAD_ID as usize * d_w + j] = 123.0 + j as f64;
        }
        let mut altered = toy_params(v.size(), d_w, d_h, max_len, 2);
        altered.embed = Value::constant(Tensor::new(vec![v.size(), d_w], embed_data));

        let paragraphs = vec![vec!["a b.".to_string()]];
        let e1 = encode_segment("a", &paragraphs, &v, &base, ParagraphAnchor::Cls).unwrap();
        let e2 = encode_segment("a", &paragraphs, &v, &altered, ParagraphAnchor::Cls).unwrap();
        let non_pad = e1.pair_token_ids[0]
            .iter()
            .filter(|&&i| i != PAD_ID)
            .count();
        let h1 = e1.hidden.reshape(vec![max_len, d_h]);
        let h2 = e2.hidden.reshape(vec![max_len, d_h]);
        for t in 0..non_pad {
            for j in 0..d_h {
                assert_eq!(h1.tensor().get2(t, j), h2.tensor().get2(t, j));
            }
        }
    }

    #[test]
    fn truncation_clips_sentence_spans() {
        let v = Vocabulary::build(["s1 s2 s3 s4 s5 s6 q"], 1).unwrap();
        let params = toy_params(v.size(), 4, 8, 8, 0);
        // Question takes 1 token; paragraph budget = 8 - 3 - 1 = 4 tokens,
        // so the second sentence is clipped and the third vanishes.
        let paragraphs = vec![vec![
            "s1 s2.".to_string(),
            "s3 s4 s5.".to_string(),
            "s6.".to_string(),
        ]];
        let enc = encode_segment("q", &paragraphs, &v, &params, ParagraphAnchor::Cls).unwrap();
        // Sentence tokens include the '.' token, so sentence 1 is
        // [s1, s2, .] = 3 tokens, sentence 2 keeps only 1 of 4.
        assert_eq!(enc.sentences.len(), 2);
        assert_eq!(enc.sentences[0].positions.len(), 3);
        assert_eq!(enc.sentences[1].positions.len(), 1);
        let map = enc.token_map();
        assert_eq!(map.len(), 4);
    }
}
