//! Neural building blocks shared by the encoder and both graph networks:
//! masked multi-head attention, a BiLSTM, concat-linear-tanh fusions and
//! scalar gates.

use crate::numerics::{Mask, Value};
use crate::Result;

/// Query/key/value projections of one attention head.
pub struct AttnHead {
    pub wq: Value,
    pub wk: Value,
    pub wv: Value,
}

/// Per-head projections; head outputs concatenate back to `heads * d_z`.
pub struct MhaParams {
    pub heads: Vec<AttnHead>,
    pub d_z: usize,
}

/// Scaled dot-product attention from each query row over the key rows.
/// `mask[q][k]` selects which keys each query may attend; `None` allows all.
/// Per-head outputs are concatenated, no output projection.
pub fn multi_head_attention(
    query: &Value,
    keys: &Value,
    mask: Option<&Mask>,
    params: &MhaParams,
) -> Result<Value> {
    let scale = 1.0 / (params.d_z as f64).sqrt();
    let mut outputs = Vec::with_capacity(params.heads.len());
    for head in &params.heads {
        let q = query.matmul(&head.wq)?;
        let k = keys.matmul(&head.wk)?;
        let v = keys.matmul(&head.wv)?;
        let scores = q.matmul(&k.transpose()?)?.scale(scale);
        let alpha = scores.softmax_rows(mask)?;
        outputs.push(alpha.matmul(&v)?);
    }
    Ok(Value::concat_cols(&outputs)?)
}

/// Attention weights of a single head, for tests that inspect coefficients.
pub fn attention_weights(
    query: &Value,
    keys: &Value,
    mask: Option<&Mask>,
    head: &AttnHead,
    d_z: usize,
) -> Result<Value> {
    let scale = 1.0 / (d_z as f64).sqrt();
    let q = query.matmul(&head.wq)?;
    let k = keys.matmul(&head.wk)?;
    let scores = q.matmul(&k.transpose()?)?.scale(scale);
    Ok(scores.softmax_rows(mask)?)
}

/// Concat -> linear -> tanh over two inputs of equal width.
pub struct FuseParams {
    pub w: Value,
    pub b: Value,
}

/// tanh([a; b] W + bias)
pub fn ffnn_concat(a: &Value, b: &Value, p: &FuseParams) -> Result<Value> {
    Ok(Value::concat_cols(&[a.clone(), b.clone()])?
        .matmul(&p.w)?
        .add_row(&p.b)?
        .tanh())
}

/// tanh([fresh; prev] W + b) + prev — the residual fusion applied after
/// attention. With zero weights it is the identity on `prev`.
pub fn fuse_residual(fresh: &Value, prev: &Value, p: &FuseParams) -> Result<Value> {
    Ok(ffnn_concat(fresh, prev, p)?.add(prev)?)
}

/// Linear + sigmoid producing one scalar per row.
pub struct GateParams {
    pub w: Value,
    pub b: Value,
}

pub fn gate(x: &Value, p: &GateParams) -> Result<Value> {
    Ok(x.matmul(&p.w)?.add_row(&p.b)?.sigmoid())
}

/// (1 - gamma) * old + gamma * new, gamma one scalar per row.
pub fn gated_interpolate(old: &Value, new: &Value, gamma: &Value) -> Result<Value> {
    let keep = old.mul_col(&gamma.one_minus())?;
    let take = new.mul_col(gamma)?;
    Ok(keep.add(&take)?)
}

/// Attention into a node bank followed by gated fusion: target rows attend
/// over source rows, the attended vector is fused with the target by a
/// feed-forward layer, and a scalar gate interpolates between the old
/// target and the fused vector.
pub struct GatedReceiveParams {
    pub mha: MhaParams,
    pub ffnn: FuseParams,
    pub gate: GateParams,
}

pub fn gated_receive(target: &Value, source: &Value, p: &GatedReceiveParams) -> Result<Value> {
    let attended = multi_head_attention(target, source, None, &p.mha)?;
    let z = ffnn_concat(target, &attended, &p.ffnn)?;
    let gamma = gate(&z, &p.gate)?;
    gated_interpolate(target, &z, &gamma)
}

/// One direction of an LSTM; gate order in the packed weights is
/// input, forget, cell, output.
pub struct LstmDir {
    pub w_x: Value,
    pub w_h: Value,
    pub b: Value,
}

pub struct BiLstmParams {
    pub fwd: LstmDir,
    pub bwd: LstmDir,
    pub hidden: usize,
}

fn lstm_cell(x: &Value, h: &Value, c: &Value, dir: &LstmDir, k: usize) -> Result<(Value, Value)> {
    let gates = x
        .matmul(&dir.w_x)?
        .add(&h.matmul(&dir.w_h)?)?
        .add_row(&dir.b)?;
    let i = gates.slice_cols(0, k)?.sigmoid();
    let f = gates.slice_cols(k, 2 * k)?.sigmoid();
    let g = gates.slice_cols(2 * k, 3 * k)?.tanh();
    let o = gates.slice_cols(3 * k, 4 * k)?.sigmoid();
    let c_next = f.mul(c)?.add(&i.mul(&g)?)?;
    let h_next = o.mul(&c_next.tanh())?;
    Ok((h_next, c_next))
}

fn lstm_direction(seq: &Value, dir: &LstmDir, k: usize, reverse: bool) -> Result<Vec<Value>> {
    let m = seq.shape()[0];
    let zero = Value::constant(crate::numerics::Tensor::zeros(vec![1, k]));
    let mut h = zero.clone();
    let mut c = zero;
    let mut states = vec![None; m];
    let order: Vec<usize> = if reverse {
        (0..m).rev().collect()
    } else {
        (0..m).collect()
    };
    for t in order {
        let x = seq.slice_rows(t, t + 1)?;
        let (h_next, c_next) = lstm_cell(&x, &h, &c, dir, k)?;
        states[t] = Some(h_next.clone());
        h = h_next;
        c = c_next;
    }
    Ok(states.into_iter().map(Option::unwrap).collect())
}

/// Bidirectional LSTM over the rows of `seq`; per-position forward and
/// backward hidden states are concatenated, so the output width is
/// `2 * hidden`.
pub fn bilstm(seq: &Value, p: &BiLstmParams) -> Result<Value> {
    let fwd = lstm_direction(seq, &p.fwd, p.hidden, false)?;
    let bwd = lstm_direction(seq, &p.bwd, p.hidden, true)?;
    let rows: Vec<Value> = fwd
        .iter()
        .zip(&bwd)
        .map(|(f, b)| Value::concat_cols(&[f.clone(), b.clone()]))
        .collect::<crate::numerics::Result<_>>()?;
    Ok(Value::concat_rows(&rows)?)
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use crate::numerics::{Mask, Tape, Tensor, Value};

    #[test]
    fn attention_weights_sum_to_one_per_target() {
        let d = 6;
        let q = const_mat(10, 3, d);
        let k = const_mat(11, 5, d);
        let mut mask = Mask::none_allowed(3, 5);
        mask.allow(0, 0);
        mask.allow(1, 1);
        mask.allow(1, 2);
        mask.allow(2, 0);
        mask.allow(2, 3);
        mask.allow(2, 4);
        let h = head(20, d, 3);
        let alpha = attention_weights(&q, &k, Some(&mask), &h, 3).unwrap();
        for i in 0..3 {
            let sum: f64 = (0..5).map(|j| alpha.tensor().get2(i, j)).sum();
            assert!((sum - 1.0).abs() < 1e-12, "row {i} sums to {sum}");
        }
        assert_eq!(alpha.tensor().get2(0, 1), 0.0);
    }

    #[test]
    fn singleton_mask_gives_weight_one() {
        let d = 4;
        let q = const_mat(30, 1, d);
        let k = const_mat(31, 2, d);
        let mut mask = Mask::none_allowed(1, 2);
        mask.allow(0, 1);
        let h = head(40, d, 2);
        let alpha = attention_weights(&q, &k, Some(&mask), &h, 2).unwrap();
        assert_eq!(alpha.data(), &[0.0, 1.0]);
    }

    #[test]
    fn identical_keys_get_uniform_weights() {
        let d = 4;
        let q = const_mat(50, 1, d);
        let row = pseudo(51, d);
        let k = Value::from_rows(&[row.clone(), row.clone(), row]);
        let h = head(52, d, 2);
        let alpha = attention_weights(&q, &k, None, &h, 2).unwrap();
        for j in 0..3 {
            assert!((alpha.data()[j] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_residual_with_zero_weights_is_identity() {
        let d = 5;
        let prev = const_mat(60, 3, d);
        let fresh = const_mat(61, 3, d);
        let p = FuseParams {
            w: Value::constant(Tensor::zeros(vec![2 * d, d])),
            b: Value::constant(Tensor::zeros(vec![1, d])),
        };
        let out = fuse_residual(&fresh, &prev, &p).unwrap();
        assert_eq!(out.data(), prev.data());
    }

    #[test]
    fn gated_interpolate_endpoints() {
        let old = Value::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let new = Value::from_rows(&[vec![-1.0, -2.0], vec![-3.0, -4.0]]);
        let zero = Value::from_rows(&[vec![0.0], vec![0.0]]);
        let one = Value::from_rows(&[vec![1.0], vec![1.0]]);
        assert_eq!(
            gated_interpolate(&old, &new, &zero).unwrap().data(),
            old.data()
        );
        assert_eq!(
            gated_interpolate(&old, &new, &one).unwrap().data(),
            new.data()
        );
    }

    #[test]
    fn bilstm_single_element_sequence() {
        let seq = const_mat(70, 1, 4);
        let p = bilstm_params(71, 4, 2);
        let out = bilstm(&seq, &p).unwrap();
        assert_eq!(out.shape(), &[1, 4]);
        assert!(out.tensor().is_finite());
    }

    #[test]
    fn bilstm_matches_independent_cell_recurrence() {
        // Step-by-step scalar re-evaluation of the packed-gate recurrence.
        let (d, k, m) = (3, 2, 3);
        let seq_data = pseudo(80, m * d);
        let p = bilstm_params(81, d, k);
        let seq = Value::constant(Tensor::new(vec![m, d], seq_data.clone()));
        let out = bilstm(&seq, &p).unwrap();

        let sigm = |x: f64| 1.0 / (1.0 + (-x).exp());
        let run_dir = |dir: &LstmDir, order: Vec<usize>| -> Vec<Vec<f64>> {
            let (wx, wh, b) = (dir.w_x.data(), dir.w_h.data(), dir.b.data());
            let mut h = vec![0.0; k];
            let mut c = vec![0.0; k];
            let mut states = vec![vec![0.0; k]; m];
            for t in order {
                let x = &seq_data[t * d..(t + 1) * d];
                let mut gates = b.to_vec();
                for (col, gval) in gates.iter_mut().enumerate() {
                    for (row, &xv) in x.iter().enumerate() {
                        *gval += xv * wx[row * 4 * k + col];
                    }
                    for (row, &hv) in h.iter().enumerate() {
                        *gval += hv * wh[row * 4 * k + col];
                    }
                }
                let mut h_next = vec![0.0; k];
                let mut c_next = vec![0.0; k];
                for j in 0..k {
                    let i_g = sigm(gates[j]);
                    let f_g = sigm(gates[k + j]);
                    let g_g = gates[2 * k + j].tanh();
                    let o_g = sigm(gates[3 * k + j]);
                    c_next[j] = f_g * c[j] + i_g * g_g;
                    h_next[j] = o_g * c_next[j].tanh();
                }
                states[t] = h_next.clone();
                h = h_next;
                c = c_next;
            }
            states
        };
        let fwd = run_dir(&p.fwd, (0..m).collect());
        let bwd = run_dir(&p.bwd, (0..m).rev().collect());
        for t in 0..m {
            for j in 0..k {
                assert!((out.tensor().get2(t, j) - fwd[t][j]).abs() < 1e-12, "fwd t={t}");
                assert!(
                    (out.tensor().get2(t, k + j) - bwd[t][j]).abs() < 1e-12,
                    "bwd t={t}"
                );
            }
        }
    }

    #[test]
    fn bilstm_and_attention_gradients_match_finite_differences() {
        let (d, k, m) = (4, 2, 3);
        let x0 = pseudo(90, m * d);

        let forward = |seq: &Value| -> Value {
            let p = bilstm_params(91, d, k);
            let states = bilstm(seq, &p).unwrap();
            let mha = mha(97, 2, d, 2);
            multi_head_attention(&states, &states, None, &mha)
                .unwrap()
                .tanh()
                .mean_all()
        };

        let tape = Tape::new();
        let seq = tape.param(Tensor::new(vec![m, d], x0.clone()));
        let loss = forward(&seq);
        let grads = tape.backward(&loss).unwrap();
        let g = grads.get(&seq).unwrap();

        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..x0.len() {
            let mut plus = x0.clone();
            let mut minus = x0.clone();
            plus[i] += h;
            minus[i] -= h;
            let fp = forward(&Value::constant(Tensor::new(vec![m, d], plus))).item();
            let fm = forward(&Value::constant(Tensor::new(vec![m, d], minus))).item();
            let fd = (fp - fm) / (2.0 * h);
            let a = g.data()[i];
            let denom = a.abs().max(fd.abs());
            if denom < 1e-8 {
                continue;
            }
            worst = worst.max((a - fd).abs() / denom);
        }
        assert!(worst < 1e-5, "max relative error {worst}");
    }
}
