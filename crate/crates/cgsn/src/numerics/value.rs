//! `Value`: an immutable tensor handle whose operations are recorded on a
//! tape whenever any input is gradient-tracked.

use std::sync::Arc;

use super::tape::{matmul_tensors, Op, Src, Tape};
use super::tensor::{transpose_into, Tensor};
use super::{Gradients, NumericsError, Result};

/// Boolean attention/pooling mask over an `[rows, cols]` score matrix.
/// Disallowed entries are excluded from the softmax and come out exactly 0.
#[derive(Clone)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allow: Vec<bool>,
}

impl Mask {
    pub fn none_allowed(rows: usize, cols: usize) -> Mask {
        Mask {
            rows,
            cols,
            allow: vec![false; rows * cols],
        }
    }

    pub fn all_allowed(rows: usize, cols: usize) -> Mask {
        Mask {
            rows,
            cols,
            allow: vec![true; rows * cols],
        }
    }

    pub fn allow(&mut self, r: usize, c: usize) {
        self.allow[r * self.cols + c] = true;
    }

    pub fn is_allowed(&self, r: usize, c: usize) -> bool {
        self.allow[r * self.cols + c]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

#[derive(Clone)]
struct Recorded {
    tape: Tape,
    id: usize,
}

/// Dense array with shape metadata; immutable once created. When built from
/// gradient-tracked inputs it carries the id of its tape node.
#[derive(Clone)]
pub struct Value {
    t: Tensor,
    rec: Option<Recorded>,
}

impl std::fmt::Debug for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Value({:?}", self.t)?;
        if let Some(rec) = &self.rec {
            write!(f, ", node {}", rec.id)?;
        }
        write!(f, ")")
    }
}

/// Convenience wrapper: gradient of a scalar recorded loss.
pub fn backward(loss: &Value) -> Result<Gradients> {
    let (tape, _) = loss.recording().ok_or(NumericsError::LossNotRecorded)?;
    tape.backward(loss)
}

impl Value {
    pub fn constant(t: Tensor) -> Value {
        Value { t, rec: None }
    }

    pub fn scalar(x: f64) -> Value {
        Value::constant(Tensor::scalar(x))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Value {
        Value::constant(Tensor::from_rows(rows))
    }

    pub(crate) fn recorded(t: Tensor, tape: Tape, id: usize) -> Value {
        Value {
            t,
            rec: Some(Recorded { tape, id }),
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.t
    }

    pub fn shape(&self) -> &[usize] {
        self.t.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.t.data()
    }

    pub fn numel(&self) -> usize {
        self.t.numel()
    }

    /// The single element of a scalar.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.t.numel(), 1);
        self.t.data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.rec.is_some()
    }

    pub(crate) fn recording(&self) -> Option<(Tape, usize)> {
        self.rec.as_ref().map(|r| (r.tape.clone(), r.id))
    }

    /// Same data, no tape: gradients do not flow through the result.
    pub fn detach(&self) -> Value {
        Value::constant(self.t.clone())
    }

    fn src(&self) -> Src {
        Src {
            node: self.rec.as_ref().map(|r| r.id),
            data: self.t.clone(),
        }
    }

    fn tape_of(inputs: &[&Value]) -> Result<Option<Tape>> {
        let mut found: Option<Tape> = None;
        for v in inputs {
            if let Some(rec) = &v.rec {
                match &found {
                    None => found = Some(rec.tape.clone()),
                    Some(t) if t.same(&rec.tape) => {}
                    Some(_) => return Err(NumericsError::TapeMismatch),
                }
            }
        }
        Ok(found)
    }

    fn finish(out: Tensor, tape: Option<Tape>, op: impl FnOnce() -> Op) -> Value {
        match tape {
            Some(tape) => {
                let id = tape.push(op(), out.clone());
                Value::recorded(out, tape, id)
            }
            None => Value::constant(out),
        }
    }

    fn rank2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape() {
            [m, n] => Ok((*m, *n)),
            _ => Err(NumericsError::BadRank {
                op,
                expected: "a rank-2 tensor",
                shape: self.shape().to_vec(),
            }),
        }
    }

    // ── linear algebra ──────────────────────────────────────────────

    pub fn matmul(&self, rhs: &Value) -> Result<Value> {
        let (_, k1) = self.rank2("matmul")?;
        let (k2, _) = rhs.rank2("matmul")?;
        if k1 != k2 {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let tape = Value::tape_of(&[self, rhs])?;
        let out = matmul_tensors(&self.t, &rhs.t);
        Ok(Value::finish(out, tape, || Op::Matmul {
            a: self.src(),
            b: rhs.src(),
        }))
    }

    pub fn transpose(&self) -> Result<Value> {
        let (m, n) = self.rank2("transpose")?;
        let mut out = vec![0.0; m * n];
        transpose_into(self.data(), &mut out, m, n);
        let tape = Value::tape_of(&[self])?;
        Ok(Value::finish(
            Tensor::new(vec![n, m], out),
            tape,
            || Op::Transpose { a: self.src() },
        ))
    }

    // ── elementwise ─────────────────────────────────────────────────

    fn same_shape(&self, rhs: &Value, op: &'static str) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(NumericsError::ShapeMismatch {
                op,
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&self, rhs: &Value) -> Result<Value> {
        self.same_shape(rhs, "add")?;
        let data = self
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(a, b)| a + b)
            .collect();
        let tape = Value::tape_of(&[self, rhs])?;
        Ok(Value::finish(
            Tensor::new(self.shape().to_vec(), data),
            tape,
            || Op::Add {
                a: self.src(),
                b: rhs.src(),
            },
        ))
    }

    pub fn sub(&self, rhs: &Value) -> Result<Value> {
        self.same_shape(rhs, "sub")?;
        let data = self
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(a, b)| a - b)
            .collect();
        let tape = Value::tape_of(&[self, rhs])?;
        Ok(Value::finish(
            Tensor::new(self.shape().to_vec(), data),
            tape,
            || Op::Sub {
                a: self.src(),
                b: rhs.src(),
            },
        ))
    }

    pub fn mul(&self, rhs: &Value) -> Result<Value> {
        self.same_shape(rhs, "mul")?;
        let data = self
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(a, b)| a * b)
            .collect();
        let tape = Value::tape_of(&[self, rhs])?;
        Ok(Value::finish(
            Tensor::new(self.shape().to_vec(), data),
            tape,
            || Op::Mul {
                a: self.src(),
                b: rhs.src(),
            },
        ))
    }

    /// `[m,n] + [1,n]`, the bias broadcast down rows.
    pub fn add_row(&self, bias: &Value) -> Result<Value> {
        let (m, n) = self.rank2("add_row")?;
        let (bm, bn) = bias.rank2("add_row")?;
        if bm != 1 || bn != n {
            return Err(NumericsError::ShapeMismatch {
                op: "add_row",
                lhs: self.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let b = bias.data();
        let mut data = self.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += b[j];
            }
        }
        let tape = Value::tape_of(&[self, bias])?;
        Ok(Value::finish(
            Tensor::new(vec![m, n], data),
            tape,
            || Op::AddRow {
                a: self.src(),
                bias: bias.src(),
            },
        ))
    }

    /// `[m,n] * [m,1]`, scaling each row by its column entry.
    pub fn mul_col(&self, col: &Value) -> Result<Value> {
        let (m, n) = self.rank2("mul_col")?;
        let (cm, cn) = col.rank2("mul_col")?;
        if cm != m || cn != 1 {
            return Err(NumericsError::ShapeMismatch {
                op: "mul_col",
                lhs: self.shape().to_vec(),
                rhs: col.shape().to_vec(),
            });
        }
        let c = col.data();
        let mut data = self.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] *= c[i];
            }
        }
        let tape = Value::tape_of(&[self, col])?;
        Ok(Value::finish(
            Tensor::new(vec![m, n], data),
            tape,
            || Op::MulCol {
                a: self.src(),
                col: col.src(),
            },
        ))
    }

    /// mul * x + add, with constant coefficients.
    pub fn affine(&self, mul: f64, add: f64) -> Value {
        let data = self.data().iter().map(|x| mul * x + add).collect();
        let tape = Value::tape_of(&[self]).expect("single input");
        Value::finish(Tensor::new(self.shape().to_vec(), data), tape, || {
            Op::Affine { a: self.src(), mul }
        })
    }

    pub fn scale(&self, c: f64) -> Value {
        self.affine(c, 0.0)
    }

    /// 1 - x, the complement used by gated interpolation.
    pub fn one_minus(&self) -> Value {
        self.affine(-1.0, 1.0)
    }

    // ── activations ─────────────────────────────────────────────────

    pub fn sigmoid(&self) -> Value {
        let data = self.data().iter().map(|&x| sigmoid(x)).collect();
        let tape = Value::tape_of(&[self]).expect("single input");
        Value::finish(Tensor::new(self.shape().to_vec(), data), tape, || {
            Op::Sigmoid { a: self.src() }
        })
    }

    pub fn tanh(&self) -> Value {
        let data = self.data().iter().map(|x| x.tanh()).collect();
        let tape = Value::tape_of(&[self]).expect("single input");
        Value::finish(Tensor::new(self.shape().to_vec(), data), tape, || Op::Tanh {
            a: self.src(),
        })
    }

    /// ln(1 + e^x), evaluated stably for large |x|.
    pub fn softplus(&self) -> Value {
        let data = self.data().iter().map(|&x| softplus(x)).collect();
        let tape = Value::tape_of(&[self]).expect("single input");
        Value::finish(Tensor::new(self.shape().to_vec(), data), tape, || {
            Op::Softplus { a: self.src() }
        })
    }

    // ── softmax ─────────────────────────────────────────────────────

    /// Softmax along `axis` of a rank-1 or rank-2 value, computed with
    /// max-subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Value> {
        match (self.shape().len(), axis) {
            (1, 0) | (2, 1) => self.softmax_rows(None),
            (2, 0) => Ok(self
                .transpose()?
                .softmax_rows(None)?
                .transpose()?),
            _ => Err(NumericsError::BadRank {
                op: "softmax",
                expected: "axis 0 of a vector or axis 0/1 of a matrix",
                shape: self.shape().to_vec(),
            }),
        }
    }

    /// Row-wise softmax over the last axis. Masked-out entries are exactly
    /// zero; every row must keep at least one allowed entry.
    pub fn softmax_rows(&self, mask: Option<&Mask>) -> Result<Value> {
        let (m, n) = match self.shape() {
            [n] => (1usize, *n),
            [m, n] => (*m, *n),
            _ => {
                return Err(NumericsError::BadRank {
                    op: "softmax",
                    expected: "a rank-1 or rank-2 tensor",
                    shape: self.shape().to_vec(),
                })
            }
        };
        if n == 0 || m == 0 {
            return Err(NumericsError::EmptyAxis {
                shape: self.shape().to_vec(),
            });
        }
        if let Some(mk) = mask {
            debug_assert_eq!((mk.rows(), mk.cols()), (m, n), "mask shape");
        }
        let x = self.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let allowed = |j: usize| mask.map_or(true, |mk| mk.is_allowed(i, j));
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if allowed(j) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(NumericsError::EmptyAxis {
                    shape: self.shape().to_vec(),
                });
            }
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if allowed(j) {
                    let e = (v - max).exp();
                    out[i * n + j] = e;
                    sum += e;
                }
            }
            for j in 0..n {
                out[i * n + j] /= sum;
            }
        }
        let tape = Value::tape_of(&[self])?;
        Ok(Value::finish(
            Tensor::new(self.shape().to_vec(), out),
            tape,
            || Op::SoftmaxRows { a: self.src() },
        ))
    }

    // ── gather / pool / reshape ─────────────────────────────────────

    fn row_width(&self) -> usize {
        self.t.numel() / self.shape()[0]
    }

    /// Mean over the axis-0 slices listed in each group.
    pub fn pool_mean(&self, groups: &[Vec<usize>]) -> Result<Value> {
        let rows = self.shape()[0];
        let width = self.row_width();
        for (g, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(NumericsError::EmptyGroup { group: g });
            }
            if let Some(&bad) = group.iter().find(|&&r| r >= rows) {
                return Err(NumericsError::RowIndex { index: bad, rows });
            }
        }
        let x = self.data();
        let mut out = vec![0.0; groups.len() * width];
        for (g, group) in groups.iter().enumerate() {
            let scale = 1.0 / group.len() as f64;
            for &row in group {
                for j in 0..width {
                    out[g * width + j] += x[row * width + j];
                }
            }
            for j in 0..width {
                out[g * width + j] *= scale;
            }
        }
        let tape = Value::tape_of(&[self])?;
        let groups = Arc::new(groups.to_vec());
        Ok(Value::finish(
            Tensor::new(vec![groups.len(), width], out),
            tape,
            move || Op::PoolMean {
                a: self.src(),
                groups,
            },
        ))
    }

    /// Select axis-0 slices, in order, possibly with repeats.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Value> {
        let rows = self.shape()[0];
        let width = self.row_width();
        if let Some(&bad) = idx.iter().find(|&&r| r >= rows) {
            return Err(NumericsError::RowIndex { index: bad, rows });
        }
        let x = self.data();
        let mut out = Vec::with_capacity(idx.len() * width);
        for &row in idx {
            out.extend_from_slice(&x[row * width..(row + 1) * width]);
        }
        let tape = Value::tape_of(&[self])?;
        let idx = Arc::new(idx.to_vec());
        Ok(Value::finish(
            Tensor::new(vec![idx.len(), width], out),
            tape,
            move || Op::GatherRows { a: self.src(), idx },
        ))
    }

    pub fn concat_rows(parts: &[Value]) -> Result<Value> {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let width = parts[0].row_width();
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.row_width() != width {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            rows += p.shape()[0];
            data.extend_from_slice(p.data());
        }
        let refs: Vec<&Value> = parts.iter().collect();
        let tape = Value::tape_of(&refs)?;
        Ok(Value::finish(
            Tensor::new(vec![rows, width], data),
            tape,
            || Op::ConcatRows {
                parts: parts.iter().map(Value::src).collect(),
            },
        ))
    }

    pub fn concat_cols(parts: &[Value]) -> Result<Value> {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let m = parts[0].shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pm, pn) = p.rank2("concat_cols")?;
            if pm != m {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; m * total];
        let mut offset = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let pd = p.data();
            for i in 0..m {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&pd[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let refs: Vec<&Value> = parts.iter().collect();
        let tape = Value::tape_of(&refs)?;
        Ok(Value::finish(
            Tensor::new(vec![m, total], data),
            tape,
            || Op::ConcatCols {
                parts: parts.iter().map(Value::src).collect(),
            },
        ))
    }

    /// Contiguous axis-0 range `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Value> {
        let rows = self.shape()[0];
        if start >= end || end > rows {
            return Err(NumericsError::BadSlice {
                start,
                end,
                len: rows,
            });
        }
        let width = self.row_width();
        let data = self.data()[start * width..end * width].to_vec();
        let mut shape = self.shape().to_vec();
        shape[0] = end - start;
        let tape = Value::tape_of(&[self])?;
        Ok(Value::finish(Tensor::new(shape, data), tape, || {
            Op::SliceRows {
                a: self.src(),
                start,
            }
        }))
    }

    /// Contiguous column range `[start, end)` of a matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Value> {
        let (m, n) = self.rank2("slice_cols")?;
        if start >= end || end > n {
            return Err(NumericsError::BadSlice {
                start,
                end,
                len: n,
            });
        }
        let w = end - start;
        let x = self.data();
        let mut data = vec![0.0; m * w];
        for i in 0..m {
            data[i * w..(i + 1) * w].copy_from_slice(&x[i * n + start..i * n + end]);
        }
        let tape = Value::tape_of(&[self])?;
        Ok(Value::finish(Tensor::new(vec![m, w], data), tape, || {
            Op::SliceCols {
                a: self.src(),
                start,
            }
        }))
    }

    /// Repeat a `[1,n]` row `m` times.
    pub fn broadcast_rows(&self, m: usize) -> Result<Value> {
        let (one, n) = self.rank2("broadcast_rows")?;
        if one != 1 {
            return Err(NumericsError::BadRank {
                op: "broadcast_rows",
                expected: "a [1,n] row",
                shape: self.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(m * n);
        for _ in 0..m {
            data.extend_from_slice(self.data());
        }
        let tape = Value::tape_of(&[self])?;
        Ok(Value::finish(Tensor::new(vec![m, n], data), tape, || {
            Op::BroadcastRows { a: self.src() }
        }))
    }

    /// Metadata-only reshape; shares both storage and tape node.
    pub fn reshape(&self, shape: Vec<usize>) -> Value {
        Value {
            t: self.t.reshaped(shape),
            rec: self.rec.clone(),
        }
    }

    // ── reductions ──────────────────────────────────────────────────

    pub fn mean_all(&self) -> Value {
        let n = self.numel().max(1);
        let s: f64 = self.data().iter().sum();
        let tape = Value::tape_of(&[self]).expect("single input");
        Value::finish(Tensor::scalar(s / n as f64), tape, || Op::MeanAll {
            a: self.src(),
        })
    }

    pub fn sum_all(&self) -> Value {
        let s: f64 = self.data().iter().sum();
        let tape = Value::tape_of(&[self]).expect("single input");
        Value::finish(Tensor::scalar(s), tape, || Op::SumAll { a: self.src() })
    }

    /// Gradient of this scalar with respect to the leaves of its tape.
    pub fn backward(&self) -> Result<Gradients> {
        backward(self)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
