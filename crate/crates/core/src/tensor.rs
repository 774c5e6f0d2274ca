//! Dense row-major matrices and the handful of kernels the encoder needs.
//!
//! Every kernel computes each output row from the matching input row alone,
//! with a fixed accumulation order, so a row's result does not depend on how
//! many other rows are in the batch.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Matrix { rows: rows.len(), cols, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `x · w + b`, row by row.
pub fn affine(x: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    assert_eq!(x.cols, w.rows);
    assert_eq!(b.len(), w.cols);
    let mut out = Matrix::zeros(x.rows, w.cols);
    for i in 0..x.rows {
        let xr = x.row(i);
        let or = out.row_mut(i);
        or.copy_from_slice(b);
        for (k, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wr = w.row(k);
            for (o, &wv) in or.iter_mut().zip(wr) {
                *o += xv * wv;
            }
        }
    }
    out
}

/// Single-vector version of [`affine`].
pub fn affine_vec(x: &[f64], w: &Matrix, b: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), w.rows);
    let mut out = b.to_vec();
    for (k, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(w.row(k)) {
            *o += xv * wv;
        }
    }
    out
}

/// `dy · wᵀ`.
pub fn matmul_transposed(dy: &Matrix, w: &Matrix) -> Matrix {
    assert_eq!(dy.cols, w.cols);
    let mut out = Matrix::zeros(dy.rows, w.rows);
    for i in 0..dy.rows {
        let dr = dy.row(i);
        for k in 0..w.rows {
            out.data[i * w.rows + k] = dot(dr, w.row(k));
        }
    }
    out
}

pub fn matvec_transposed(dy: &[f64], w: &Matrix) -> Vec<f64> {
    (0..w.rows).map(|k| dot(dy, w.row(k))).collect()
}

/// `dw += xᵀ · dy` and `db += Σ_rows dy`.
pub fn accumulate_affine_grad(dw: &mut Matrix, db: &mut [f64], x: &Matrix, dy: &Matrix) {
    assert_eq!((dw.rows, dw.cols), (x.cols, dy.cols));
    for i in 0..x.rows {
        let xr = x.row(i);
        let dr = dy.row(i);
        for (bv, &d) in db.iter_mut().zip(dr) {
            *bv += d;
        }
        for (k, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (g, &d) in dw.row_mut(k).iter_mut().zip(dr) {
                *g += xv * d;
            }
        }
    }
}

pub fn accumulate_affine_grad_vec(dw: &mut Matrix, db: &mut [f64], x: &[f64], dy: &[f64]) {
    for (bv, &d) in db.iter_mut().zip(dy) {
        *bv += d;
    }
    for (k, &xv) in x.iter().enumerate() {
        for (g, &d) in dw.row_mut(k).iter_mut().zip(dy) {
            *g += xv * d;
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_rows_independent() {
        let w = Matrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64 * 0.3 - 0.4);
        let x = Matrix::from_fn(4, 3, |i, j| (i + j) as f64 * 0.7 - 1.1);
        let full = affine(&x, &w, &[0.1, -0.2]);
        let single = affine_vec(x.row(2), &w, &[0.1, -0.2]);
        assert_eq!(full.row(2), single.as_slice());
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
        let p = softmax(&[0.0; 4]);
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }
}
