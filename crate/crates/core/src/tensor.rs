//! Dense row-major `f32` arrays and the deterministic matmul kernel.
//!
//! The single matrix-multiply kernel below defines the canonical reduction
//! order for the whole crate: every output element accumulates its terms in
//! ascending index order along the shared dimension, one term at a time.
//! Parallelism only ever splits *output rows* across threads, never a
//! reduction, so sequential and parallel execution are bit-identical.
//! Gradient products reuse the same kernel via explicit transposes.

use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};

/// Minimum flop count before the matmul kernel bothers with the thread pool.
const PAR_MIN_FLOPS: usize = 1 << 21;

/// A dense row-major array of `f32` with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl DenseArray {
    /// Array of zeros with the given shape.
    pub fn zeros(shape: &[usize]) -> DenseArray {
        let n = shape.iter().product();
        DenseArray {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    /// Wrap an existing buffer. Fails unless the shape's element count
    /// matches the buffer length exactly.
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<DenseArray> {
        let mut n: usize = 1;
        for &d in shape {
            n = n.checked_mul(d).ok_or_else(|| {
                Error::invalid_argument(format!("shape {shape:?} overflows usize"))
            })?;
        }
        if n != data.len() {
            return Err(Error::invalid_argument(format!(
                "shape {shape:?} implies {n} elements but buffer has {}",
                data.len()
            )));
        }
        Ok(DenseArray {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Rows and columns of a 2-D array; panics on other ranks (internal use
    /// is always rank-checked at construction).
    pub fn dims2(&self) -> (usize, usize) {
        assert!(
            self.shape.len() == 2,
            "expected rank-2 array, got shape {:?}",
            self.shape
        );
        (self.shape[0], self.shape[1])
    }

    /// Row `i` of a 2-D array as a slice.
    pub fn row(&self, i: usize) -> &[f32] {
        let (_, c) = self.dims2();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let (_, c) = self.dims2();
        &mut self.data[i * c..(i + 1) * c]
    }

    /// True if every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// 2-D transpose (copying).
    pub fn transpose2(&self) -> DenseArray {
        let (r, c) = self.dims2();
        let mut out = vec![0.0f32; r * c];
        for i in 0..r {
            let src = &self.data[i * c..(i + 1) * c];
            for (j, &v) in src.iter().enumerate() {
                out[j * r + i] = v;
            }
        }
        DenseArray {
            shape: vec![c, r],
            data: out,
        }
    }
}

/// `y[j] += alpha * x[j]` over equal-length slices.
#[inline]
fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yj, xj) in y.iter_mut().zip(x) {
        *yj += alpha * *xj;
    }
}

/// One output row: `out_row = sum_k a_row[k] * b[k, :]`, `k` ascending.
#[inline]
fn matmul_row(a_row: &[f32], b: &[f32], n: usize, out_row: &mut [f32]) {
    out_row.fill(0.0);
    for (k, &aik) in a_row.iter().enumerate() {
        axpy(aik, &b[k * n..k * n + n], out_row);
    }
}

/// `a [m,k] @ b [k,n] -> [m,n]`.
///
/// Each output element is reduced strictly in ascending `k` order; threads
/// only ever split whole output rows, so results are mode-independent.
pub fn matmul(a: &DenseArray, b: &DenseArray, mode: ExecMode) -> DenseArray {
    let (m, k) = a.dims2();
    let (kb, n) = b.dims2();
    assert!(
        k == kb,
        "matmul shape mismatch: [{m},{k}] @ [{kb},{n}]"
    );
    let mut out = DenseArray::zeros(&[m, n]);
    if m == 0 || n == 0 {
        return out;
    }
    let flops = 2 * m * n * k;
    let mode = if flops >= PAR_MIN_FLOPS {
        mode
    } else {
        ExecMode::Sequential
    };
    let a_data = a.data();
    let b_data = b.data();
    exec::for_each_chunk_mut(mode, out.data_mut(), n, |i, out_row| {
        matmul_row(&a_data[i * k..(i + 1) * k], b_data, n, out_row);
    });
    out
}
