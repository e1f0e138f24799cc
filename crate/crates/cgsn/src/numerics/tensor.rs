//! Row-major dense storage shared by values and tape nodes.

use std::fmt;
use std::sync::Arc;

use super::mem;

pub(crate) struct Storage {
    data: Vec<f64>,
}

impl Storage {
    fn new(data: Vec<f64>) -> Self {
        mem::on_alloc(data.len() * std::mem::size_of::<f64>());
        Storage { data }
    }
}

impl Drop for Storage {
    fn drop(&mut self) {
        mem::on_free(self.data.len() * std::mem::size_of::<f64>());
    }
}

/// Immutable dense array with shape metadata. Clones share storage.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    storage: Arc<Storage>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match {} elements",
            shape,
            data.len()
        );
        Tensor {
            shape,
            storage: Arc::new(Storage::new(data)),
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn filled(shape: Vec<usize>, x: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, vec![x; n])
    }

    /// Scalar as a 1x1 matrix.
    pub fn scalar(x: f64) -> Tensor {
        Tensor::new(vec![1, 1], vec![x])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Tensor {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(m * n);
        for r in rows {
            assert_eq!(r.len(), n, "ragged rows");
            data.extend_from_slice(r);
        }
        Tensor::new(vec![m, n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.storage.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.storage.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.storage.data.clone()
    }

    /// Same storage, new shape. Element count must be preserved.
    pub fn reshaped(&self, shape: Vec<usize>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.numel(),
            "reshape {:?} -> {:?}",
            self.shape,
            shape
        );
        Tensor {
            shape,
            storage: Arc::clone(&self.storage),
        }
    }

    /// Interpret as a matrix: rank-1 `[n]` is one row, rank-2 as-is,
    /// higher ranks collapse leading axes into rows of the last axis.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => {
                let cols = *self.shape.last().unwrap();
                (self.numel() / cols.max(1), cols)
            }
        }
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        let (_, cols) = self.dims2();
        self.storage.data[r * cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.storage.data.iter().all(|x| x.is_finite())
    }

    pub fn bits_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data()
                .iter()
                .zip(other.data())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.numel() <= 16 {
            write!(f, " {:?}", self.data())?;
        }
        Ok(())
    }
}

/// out[m,n] = a[m,k] * b[k,n]
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn transpose_into(a: &[f64], out: &mut [f64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
}
