//! Row-major dense matrices of `f64`.
//!
//! Everything in this crate is two dimensional: vectors are `1 x n` rows or
//! `n x 1` columns and scalars are `1 x 1`.

use serde::{Deserialize, Serialize};

/// Below this many multiply-adds the naive kernel beats the packed GEMM.
const GEMM_THRESHOLD: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    /// Builds a tensor from row-major data.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length does not match shape {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        let cols = data.len();
        Self::from_vec(1, cols, data)
    }

    pub fn column_vector(data: Vec<f64>) -> Self {
        let rows = data.len();
        Self::from_vec(rows, 1, data)
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_vec(1, 1, vec![value])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The single value of a `1 x 1` tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a {}x{} tensor", self.rows, self.cols);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape(), other.shape());
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `self (m x k) * other (k x n)`; shapes must already be validated.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (m, k) = self.shape();
        let n = other.cols;
        debug_assert_eq!(k, other.rows);
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, &self.data, k, 1, &other.data, n, 1, &mut out.data, 0.0);
        out
    }

    /// `self * otherᵀ`.
    pub fn matmul_t(&self, other: &Tensor) -> Tensor {
        let (m, k) = self.shape();
        let n = other.rows;
        debug_assert_eq!(k, other.cols);
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, &self.data, k, 1, &other.data, 1, k, &mut out.data, 0.0);
        out
    }

    /// `selfᵀ * other`.
    pub fn t_matmul(&self, other: &Tensor) -> Tensor {
        let (k, m) = self.shape();
        let n = other.cols;
        debug_assert_eq!(k, other.rows);
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, &self.data, 1, m, &other.data, n, 1, &mut out.data, 0.0);
        out
    }
}

/// `c = a * b + beta * c` with explicit strides (row stride, col stride).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_rs: usize,
    a_cs: usize,
    b: &[f64],
    b_rs: usize,
    b_cs: usize,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if m * k * n >= GEMM_THRESHOLD {
        // SAFETY: all slices cover the strided extents implied by (m, k, n)
        // and the strides given above; `c` is a distinct, dense m x n buffer.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                a_rs as isize,
                a_cs as isize,
                b.as_ptr(),
                b_rs as isize,
                b_cs as isize,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        return;
    }
    if beta == 0.0 {
        c.iter_mut().for_each(|x| *x = 0.0);
    }
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * a_rs + p * a_cs];
            if av == 0.0 {
                continue;
            }
            for (j, cv) in c_row.iter_mut().enumerate() {
                *cv += av * b[p * b_rs + j * b_cs];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a.get(i, p) * b.get(p, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn filled(rows: usize, cols: usize, seed: f64) -> Tensor {
        let data = (0..rows * cols).map(|i| ((i as f64 + seed) * 0.37).sin()).collect();
        Tensor::from_vec(rows, cols, data)
    }

    #[test]
    fn matmul_variants_agree_with_naive_small_and_large() {
        for &(m, k, n) in &[(2, 3, 4), (40, 30, 20), (1, 64, 128)] {
            let a = filled(m, k, 1.0);
            let b = filled(k, n, 2.0);
            let expect = naive(&a, &b);
            let got = a.matmul(&b);
            let got_t = a.matmul_t(&b.transpose());
            let got_tt = a.transpose().t_matmul(&b);
            for ((x, y), z) in expect.data().iter().zip(got.data()).zip(got_t.data()) {
                assert!((x - y).abs() < 1e-12 && (x - z).abs() < 1e-12);
            }
            for (x, y) in expect.data().iter().zip(got_tt.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    #[should_panic]
    fn from_vec_rejects_wrong_length() {
        let _ = Tensor::from_vec(2, 2, vec![1.0; 3]);
    }
}
