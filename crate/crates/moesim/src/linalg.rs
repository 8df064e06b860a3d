//! Dense `f64` kernels with a pinned accumulation order.
//!
//! Decoded tokens must be reproducible bit-for-bit across implementations,
//! so every reduction here walks indices in ascending order and nothing is
//! allowed to reassociate. The contract, which an independent reference
//! implementation can follow:
//!
//! * `dot(a, b)` = `a[0]*b[0] + a[1]*b[1] + ...`, accumulated left to right.
//! * `matvec` applies `dot` row by row (row-major storage).
//! * `tmatvec(M, x)[j]` = `sum_i M[i][j] * x[i]`, `i` ascending.
//! * `softmax` subtracts the maximum, exponentiates, then divides by the
//!   left-to-right sum of the shifted exponentials.
//! * `argmax` returns the first index attaining the maximum (lowest index
//!   wins ties).

use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    /// Fills row-major from a generator, one entry at a time. The fill order
    /// (row 0 left-to-right, then row 1, ...) is part of the weight-stream
    /// contract.
    pub fn fill_with(rows: usize, cols: usize, mut f: impl FnMut() -> f64) -> Self {
        let data = (0..rows * cols).map(|_| f()).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `y = M x` for an `x` of length `cols`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `y = M^T x` for an `x` of length `rows`; used by the output head,
    /// which is stored hidden-by-vocab.
    pub fn tmatvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "tmatvec dimension mismatch");
        let mut y = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            let row = self.row(i);
            for (j, yj) in y.iter_mut().enumerate() {
                *yj += xi * row[j];
            }
        }
        y
    }
}

/// Left-to-right dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// In-place `a += b`.
pub fn add_assign(a: &mut [f64], b: &[f64]) {
    debug_assert_eq!(a.len(), b.len());
    for i in 0..a.len() {
        a[i] += b[i];
    }
}

/// Numerically shifted softmax; see the module docs for the exact order.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    debug_assert!(!xs.is_empty());
    let mut m = f64::NEG_INFINITY;
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    let exps: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
    let mut sum = 0.0;
    for &e in &exps {
        sum += e;
    }
    exps.into_iter().map(|e| e / sum).collect()
}

/// First index attaining the maximum (ties resolve to the lowest index).
pub fn argmax(xs: &[f64]) -> usize {
    debug_assert!(!xs.is_empty());
    let mut best = 0;
    for i in 1..xs.len() {
        if xs[i] > xs[best] {
            best = i;
        }
    }
    best
}

pub fn relu_in_place(xs: &mut [f64]) {
    for x in xs.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

pub fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}
