//! Row-major dense matrices and the one matrix-product kernel the networks need.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `rows × cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(alloc::format!(
                "{} values cannot form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Stacks equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(alloc::format!(
                    "ragged rows: expected {cols} columns, found {}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix { rows: self.cols, cols: self.rows, data: transpose(&self.data, self.rows, self.cols) }
    }
}

/// Transpose of a row-major `rows × cols` block.
pub fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    const TILE: usize = 32;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    out[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    out
}

const MR: usize = 6;
const NR: usize = 16;

/// `c (m×n) += a (m×k) · b (k×n)`, all row-major.
///
/// The summation order over `k` is fixed, so results are bitwise
/// reproducible for identical inputs.
pub fn gemm_acc(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let mut panel = vec![0.0; k * NR];
    let n_full = n - n % NR;
    let m_full = m - m % MR;
    for j0 in (0..n_full).step_by(NR) {
        for p in 0..k {
            panel[p * NR..(p + 1) * NR].copy_from_slice(&b[p * n + j0..p * n + j0 + NR]);
        }
        for i0 in (0..m_full).step_by(MR) {
            kernel(k, &a[i0 * k..(i0 + MR) * k], &panel, c, n, i0, j0);
        }
        for i in m_full..m {
            let arow = &a[i * k..(i + 1) * k];
            let mut acc = [0.0; NR];
            for p in 0..k {
                let av = arow[p];
                let bp = &panel[p * NR..(p + 1) * NR];
                for j in 0..NR {
                    acc[j] += av * bp[j];
                }
            }
            for j in 0..NR {
                c[i * n + j0 + j] += acc[j];
            }
        }
    }
    if n_full < n {
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            for j in n_full..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += arow[p] * b[p * n + j];
                }
                c[i * n + j] += acc;
            }
        }
    }
}

#[inline(always)]
fn kernel(k: usize, a: &[f64], panel: &[f64], c: &mut [f64], n: usize, i0: usize, j0: usize) {
    let mut acc = [[0.0f64; NR]; MR];
    for p in 0..k {
        let bp: &[f64; NR] = panel[p * NR..(p + 1) * NR].try_into().unwrap();
        let av: [f64; MR] = core::array::from_fn(|r| a[r * k + p]);
        for r in 0..MR {
            for j in 0..NR {
                acc[r][j] += av[r] * bp[j];
            }
        }
    }
    for r in 0..MR {
        let row = &mut c[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR];
        for j in 0..NR {
            row[j] += acc[r][j];
        }
    }
}

/// `a (m×k) · b (k×n)` into a fresh buffer.
pub fn matmul(m: usize, n: usize, k: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm_acc(m, n, k, a, b, &mut c);
    c
}
