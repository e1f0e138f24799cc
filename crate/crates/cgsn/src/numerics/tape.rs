//! Operation recording and the reverse pass.
//!
//! A tape is a Wengert list: nodes are appended during the forward pass in
//! topological order (inputs always precede outputs), and the backward pass
//! walks the list once in reverse, accumulating vector-Jacobian products.
//! Saved tensors are `Arc` clones of forward activations, so recording does
//! not copy data.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use super::tensor::{matmul_into, transpose_into, Tensor};
use super::value::Value;
use super::{NumericsError, Result};

/// Reference to an operation input: the tensor itself plus, when the input
/// was recorded, its node id for gradient routing.
#[derive(Clone)]
pub(crate) struct Src {
    pub node: Option<usize>,
    pub data: Tensor,
}

pub(crate) enum Op {
    Leaf,
    Matmul { a: Src, b: Src },
    Transpose { a: Src },
    Add { a: Src, b: Src },
    Sub { a: Src, b: Src },
    Mul { a: Src, b: Src },
    /// [m,n] + [1,n]
    AddRow { a: Src, bias: Src },
    /// [m,n] * [m,1], the column broadcast across row entries
    MulCol { a: Src, col: Src },
    /// mul * a + add (constants)
    Affine { a: Src, mul: f64 },
    Sigmoid { a: Src },
    Tanh { a: Src },
    Softplus { a: Src },
    /// Softmax over the last axis; masked entries are exactly zero in the
    /// output, so the backward pass needs no mask.
    SoftmaxRows { a: Src },
    /// out[g] = mean of rows listed in groups[g]
    PoolMean { a: Src, groups: Arc<Vec<Vec<usize>>> },
    GatherRows { a: Src, idx: Arc<Vec<usize>> },
    ConcatRows { parts: Vec<Src> },
    ConcatCols { parts: Vec<Src> },
    SliceRows { a: Src, start: usize },
    SliceCols { a: Src, start: usize },
    /// [1,n] -> [m,n]
    BroadcastRows { a: Src },
    MeanAll { a: Src },
    SumAll { a: Src },
}

struct Node {
    op: Op,
    out: Tensor,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

/// Reverse-mode differentiation record for one forward pass. Cheap to clone
/// (shared handle); exclusive to one training context at a time.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    /// Register a gradient-tracked leaf.
    pub fn param(&self, t: Tensor) -> Value {
        let id = self.push(Op::Leaf, t.clone());
        Value::recorded(t, self.clone(), id)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub(crate) fn push(&self, op: Op, out: Tensor) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { op, out });
        inner.nodes.len() - 1
    }

    /// Gradient of a scalar, tape-recorded loss with respect to every
    /// recorded leaf. Each node is visited exactly once; two runs over the
    /// same tape produce bit-identical gradients.
    pub fn backward(&self, loss: &Value) -> Result<Gradients> {
        let (loss_tape, loss_id) = loss.recording().ok_or(NumericsError::LossNotRecorded)?;
        if !self.same(&loss_tape) {
            return Err(NumericsError::TapeMismatch);
        }
        if loss.tensor().numel() != 1 {
            return Err(NumericsError::NonScalarLoss {
                shape: loss.shape().to_vec(),
            });
        }

        let inner = self.inner.borrow();
        let n = inner.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss_id] = Some(vec![1.0]);

        for id in (0..n).rev() {
            if matches!(inner.nodes[id].op, Op::Leaf) {
                continue;
            }
            let d = match grads[id].take() {
                Some(d) => d,
                None => continue,
            };
            backward_op(&inner.nodes[id], &d, &mut grads);
        }

        let mut out: Vec<Option<Tensor>> = vec![None; n];
        for (id, node) in inner.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                if let Some(g) = grads[id].take() {
                    out[id] = Some(Tensor::new(node.out.shape().to_vec(), g));
                }
            }
        }
        Ok(Gradients {
            tape: self.clone(),
            grads: out,
        })
    }
}

/// Leaf gradients produced by one backward pass.
pub struct Gradients {
    tape: Tape,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a leaf of the tape this backward pass ran on. `None`
    /// when the leaf did not participate in the loss.
    pub fn get(&self, leaf: &Value) -> Option<Tensor> {
        let (tape, id) = leaf.recording()?;
        if !tape.same(&self.tape) {
            return None;
        }
        self.grads.get(id).cloned().flatten()
    }

    /// Like [`get`](Self::get) but zero-filled for non-participating leaves.
    pub fn get_or_zeros(&self, leaf: &Value) -> Tensor {
        self.get(leaf)
            .unwrap_or_else(|| Tensor::zeros(leaf.shape().to_vec()))
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], src: &Src, contrib: Vec<f64>) {
    let Some(id) = src.node else { return };
    match &mut grads[id] {
        Some(g) => {
            for (gi, ci) in g.iter_mut().zip(&contrib) {
                *gi += ci;
            }
        }
        None => grads[id] = Some(contrib),
    }
}

fn backward_op(node: &Node, d: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match &node.op {
        Op::Leaf => {}
        Op::Matmul { a, b } => {
            let (m, k) = a.data.dims2();
            let (_, n) = b.data.dims2();
            if a.node.is_some() {
                // dA = d * B^T
                let bd = b.data.data();
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for kk in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += d[i * n + j] * bd[kk * n + j];
                        }
                        da[i * k + kk] = s;
                    }
                }
                accumulate(grads, a, da);
            }
            if b.node.is_some() {
                // dB = A^T * d
                let ad = a.data.data();
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for kk in 0..k {
                        let av = ad[i * k + kk];
                        for j in 0..n {
                            db[kk * n + j] += av * d[i * n + j];
                        }
                    }
                }
                accumulate(grads, b, db);
            }
        }
        Op::Transpose { a } => {
            let (rows, cols) = a.data.dims2();
            let mut da = vec![0.0; rows * cols];
            // d has shape [cols, rows]; transpose it back.
            transpose_into(d, &mut da, cols, rows);
            accumulate(grads, a, da);
        }
        Op::Add { a, b } => {
            accumulate(grads, a, d.to_vec());
            accumulate(grads, b, d.to_vec());
        }
        Op::Sub { a, b } => {
            accumulate(grads, a, d.to_vec());
            accumulate(grads, b, d.iter().map(|x| -x).collect());
        }
        Op::Mul { a, b } => {
            if a.node.is_some() {
                let contrib = d.iter().zip(b.data.data()).map(|(x, y)| x * y).collect();
                accumulate(grads, a, contrib);
            }
            if b.node.is_some() {
                let contrib = d.iter().zip(a.data.data()).map(|(x, y)| x * y).collect();
                accumulate(grads, b, contrib);
            }
        }
        Op::AddRow { a, bias } => {
            let (m, cols) = a.data.dims2();
            accumulate(grads, a, d.to_vec());
            if bias.node.is_some() {
                let mut db = vec![0.0; cols];
                for i in 0..m {
                    for j in 0..cols {
                        db[j] += d[i * cols + j];
                    }
                }
                accumulate(grads, bias, db);
            }
        }
        Op::MulCol { a, col } => {
            let (m, cols) = a.data.dims2();
            let cd = col.data.data();
            if a.node.is_some() {
                let mut da = vec![0.0; m * cols];
                for i in 0..m {
                    for j in 0..cols {
                        da[i * cols + j] = d[i * cols + j] * cd[i];
                    }
                }
                accumulate(grads, a, da);
            }
            if col.node.is_some() {
                let ad = a.data.data();
                let mut dc = vec![0.0; m];
                for i in 0..m {
                    let mut s = 0.0;
                    for j in 0..cols {
                        s += d[i * cols + j] * ad[i * cols + j];
                    }
                    dc[i] = s;
                }
                accumulate(grads, col, dc);
            }
        }
        Op::Affine { a, mul } => {
            accumulate(grads, a, d.iter().map(|x| mul * x).collect());
        }
        Op::Sigmoid { a } => {
            let y = node.out.data();
            let contrib = d.iter().zip(y).map(|(x, y)| x * y * (1.0 - y)).collect();
            accumulate(grads, a, contrib);
        }
        Op::Tanh { a } => {
            let y = node.out.data();
            let contrib = d.iter().zip(y).map(|(x, y)| x * (1.0 - y * y)).collect();
            accumulate(grads, a, contrib);
        }
        Op::Softplus { a } => {
            let x = a.data.data();
            let contrib = d
                .iter()
                .zip(x)
                .map(|(g, &xi)| g / (1.0 + (-xi).exp()))
                .collect();
            accumulate(grads, a, contrib);
        }
        Op::SoftmaxRows { a } => {
            let (m, cols) = node.out.dims2();
            let y = node.out.data();
            let mut da = vec![0.0; m * cols];
            for i in 0..m {
                let row = i * cols;
                let mut dot = 0.0;
                for j in 0..cols {
                    dot += d[row + j] * y[row + j];
                }
                for j in 0..cols {
                    da[row + j] = y[row + j] * (d[row + j] - dot);
                }
            }
            accumulate(grads, a, da);
        }
        Op::PoolMean { a, groups } => {
            let width = a.data.numel() / a.data.shape()[0];
            let mut da = vec![0.0; a.data.numel()];
            for (g, group) in groups.iter().enumerate() {
                let scale = 1.0 / group.len() as f64;
                for &row in group {
                    for j in 0..width {
                        da[row * width + j] += d[g * width + j] * scale;
                    }
                }
            }
            accumulate(grads, a, da);
        }
        Op::GatherRows { a, idx } => {
            let width = a.data.numel() / a.data.shape()[0];
            let mut da = vec![0.0; a.data.numel()];
            for (i, &row) in idx.iter().enumerate() {
                for j in 0..width {
                    da[row * width + j] += d[i * width + j];
                }
            }
            accumulate(grads, a, da);
        }
        Op::ConcatRows { parts } => {
            let mut offset = 0;
            for p in parts {
                let n = p.data.numel();
                accumulate(grads, p, d[offset..offset + n].to_vec());
                offset += n;
            }
        }
        Op::ConcatCols { parts } => {
            let (m, total_cols) = node.out.dims2();
            let mut col_offset = 0;
            for p in parts {
                let (_, pc) = p.data.dims2();
                if p.node.is_some() {
                    let mut dp = vec![0.0; m * pc];
                    for i in 0..m {
                        for j in 0..pc {
                            dp[i * pc + j] = d[i * total_cols + col_offset + j];
                        }
                    }
                    accumulate(grads, p, dp);
                }
                col_offset += pc;
            }
        }
        Op::SliceRows { a, start } => {
            let width = a.data.numel() / a.data.shape()[0];
            let mut da = vec![0.0; a.data.numel()];
            da[start * width..start * width + d.len()].copy_from_slice(d);
            accumulate(grads, a, da);
        }
        Op::SliceCols { a, start } => {
            let (m, cols) = a.data.dims2();
            let out_cols = d.len() / m;
            let mut da = vec![0.0; m * cols];
            for i in 0..m {
                for j in 0..out_cols {
                    da[i * cols + start + j] = d[i * out_cols + j];
                }
            }
            accumulate(grads, a, da);
        }
        Op::BroadcastRows { a } => {
            let (m, cols) = node.out.dims2();
            let mut da = vec![0.0; cols];
            for i in 0..m {
                for j in 0..cols {
                    da[j] += d[i * cols + j];
                }
            }
            accumulate(grads, a, da);
        }
        Op::MeanAll { a } => {
            let n = a.data.numel();
            let g = d[0] / n as f64;
            accumulate(grads, a, vec![g; n]);
        }
        Op::SumAll { a } => {
            accumulate(grads, a, vec![d[0]; a.data.numel()]);
        }
    }
}

/// out = a[m,k] * b[k,n], eager.
pub(crate) fn matmul_tensors(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = a.dims2();
    let (_, n) = b.dims2();
    let mut out = vec![0.0; m * n];
    matmul_into(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(vec![m, n], out)
}
