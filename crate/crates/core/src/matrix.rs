//! Dense row-major matrices with log-domain products.

use rayon::prelude::*;

use crate::logspace::log_sum_exp_iter;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Ordinary product `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let bt = other.transpose();
        let mut out = Matrix::zeros(self.rows, other.cols);
        out.data
            .par_chunks_mut(other.cols.max(1))
            .enumerate()
            .for_each(|(i, row)| {
                let a = self.row(i);
                for (j, slot) in row.iter_mut().enumerate() {
                    *slot = a.iter().zip(bt.row(j)).map(|(x, y)| x * y).sum();
                }
            });
        out
    }

    /// Log-domain product: `C_ij = log sum_k exp(A_ik + B_kj)`.
    ///
    /// Every entry keeps full relative precision, including entries far
    /// below the underflow threshold of the linear-domain product.
    pub fn log_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "log_matmul shape mismatch");
        let bt = other.transpose();
        let mut out = Matrix::zeros(self.rows, other.cols);
        out.data
            .par_chunks_mut(other.cols.max(1))
            .enumerate()
            .for_each(|(i, row)| {
                let a = self.row(i);
                for (j, slot) in row.iter_mut().enumerate() {
                    let b = bt.row(j);
                    *slot = log_sum_exp_iter(a.iter().zip(b).map(|(x, y)| x + y));
                }
            });
        out
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_matmul_agrees_with_linear_product() {
        let a = Matrix::from_fn(3, 4, |i, j| 0.1 + (i * 4 + j) as f64 * 0.05);
        let b = Matrix::from_fn(4, 2, |i, j| 0.3 + (i + 2 * j) as f64 * 0.1);
        let lin = a.matmul(&b);
        let log = a.map(f64::ln).log_matmul(&b.map(f64::ln)).map(f64::exp);
        assert!(lin.max_abs_diff(&log) < 1e-14);
    }

    #[test]
    fn log_matmul_keeps_tiny_entries() {
        let a = Matrix::from_vec(1, 2, vec![-900.0, -905.0]);
        let b = Matrix::from_vec(2, 1, vec![-900.0, -895.0]);
        let c = a.log_matmul(&b);
        assert!((c[(0, 0)] - (-1800.0 + 2.0_f64.ln())).abs() < 1e-12);
    }
}
