//! Small row-major matrix used for batched network evaluation.
//!
//! Parallel products split work over output rows only, so every output
//! element is a serial dot product and results are bitwise identical at any
//! thread count.

use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Below this many output elements the rayon dispatch overhead dominates.
const PAR_THRESHOLD: usize = 16 * 1024;

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged row in Matrix::from_rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// `self · bᵀ`, b given as `[n × k]` with k = self.cols. Result `[rows × n]`.
    /// This is the layout used for `X · Wᵀ` with W stored row-major `[out × in]`.
    pub fn matmul_bt(&self, b: &Matrix) -> Matrix {
        assert_eq!(self.cols, b.cols, "matmul_bt inner dims");
        let mut out = Matrix::zeros(self.rows, b.rows);
        let k = self.cols;
        let n = b.rows;
        let body = |i: usize, out_row: &mut [f64]| {
            let a_row = self.row(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = &b.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for t in 0..k {
                    acc += a_row[t] * b_row[t];
                }
                *o = acc;
            }
        };
        if self.rows * n >= PAR_THRESHOLD {
            out.data
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, row)| body(i, row));
        } else {
            for (i, row) in out.data.chunks_mut(n).enumerate() {
                body(i, row);
            }
        }
        out
    }

    /// `selfᵀ · b`, with self `[n × m]` and b `[n × p]`. Result `[m × p]`.
    /// Used for parameter gradients `Gᵀ · X`; the sum over the batch runs in
    /// a fixed order inside each output element.
    pub fn matmul_at(&self, b: &Matrix) -> Matrix {
        assert_eq!(self.rows, b.rows, "matmul_at inner dims");
        let m = self.cols;
        let p = b.cols;
        let n = self.rows;
        let mut out = Matrix::zeros(m, p);
        let body = |i: usize, out_row: &mut [f64]| {
            for (j, o) in out_row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for t in 0..n {
                    acc += self.data[t * m + i] * b.data[t * p + j];
                }
                *o = acc;
            }
        };
        if m * p >= PAR_THRESHOLD {
            out.data
                .par_chunks_mut(p)
                .enumerate()
                .for_each(|(i, row)| body(i, row));
        } else {
            for (i, row) in out.data.chunks_mut(p).enumerate() {
                body(i, row);
            }
        }
        out
    }

    pub fn add_row_broadcast(&mut self, bias: &[f64]) {
        assert_eq!(bias.len(), self.cols);
        for r in 0..self.rows {
            let row = self.row_mut(r);
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
    }

    /// Column sums, accumulated row-by-row in order.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }
}

/// Sample mean of each column.
pub fn col_means(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows.first().map_or(0, |r| r.len());
    let mut m = vec![0.0; d];
    for r in rows {
        for (mi, v) in m.iter_mut().zip(r) {
            *mi += v;
        }
    }
    let n = rows.len().max(1) as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Unbiased sample covariance (denominator n−1) as a nalgebra matrix.
pub fn sample_covariance(rows: &[Vec<f64>]) -> nalgebra::DMatrix<f64> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    let mean = col_means(rows);
    let mut cov = nalgebra::DMatrix::zeros(d, d);
    for r in rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in 0..d {
                cov[(i, j)] += di * (r[j] - mean[j]);
            }
        }
    }
    if n > 1 {
        cov /= (n - 1) as f64;
    }
    cov
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_bt_matches_by_hand() {
        // X [2×3] · Wᵀ with W [2×3] → [2×2]
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        let w = Matrix::from_rows(&[vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]);
        let y = x.matmul_bt(&w);
        assert_eq!(y.row(0), &[4.0, 2.0]);
        assert_eq!(y.row(1), &[10.0, 5.0]);
    }

    #[test]
    fn matmul_at_matches_by_hand() {
        let g = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let x = Matrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]);
        let y = g.matmul_at(&x); // [2×2]
        assert_eq!(y.row(0), &[26.0, 30.0]);
        assert_eq!(y.row(1), &[38.0, 44.0]);
    }

    #[test]
    fn covariance_of_degenerate_cloud_is_zero() {
        let rows = vec![vec![1.0, -2.0]; 10];
        let cov = sample_covariance(&rows);
        assert!(cov.iter().all(|&v| v == 0.0));
    }
}
