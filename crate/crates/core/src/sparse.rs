//! Compressed sparse row storage for the block-banded discrete system.

use nalgebra::{DMatrix, DVector};

use crate::linalg::CompensatedSum;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Square `dim × dim` matrix from `(row, col, value)` entries. Duplicates
    /// are summed and exact zeros dropped.
    pub fn from_triplets(dim: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; dim + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            assert!(r < dim && c < dim, "entry ({r}, {c}) outside {dim}x{dim}");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            cols.push(c);
            vals.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut m = Self {
            dim,
            row_ptr,
            cols,
            vals,
        };
        m.drop_zeros();
        m
    }

    pub fn from_dense(d: &DMatrix<f64>) -> Self {
        assert_eq!(d.nrows(), d.ncols(), "sparse matrices here are square");
        let mut entries = Vec::new();
        for i in 0..d.nrows() {
            for j in 0..d.ncols() {
                if d[(i, j)] != 0.0 {
                    entries.push((i, j, d[(i, j)]));
                }
            }
        }
        Self::from_triplets(d.nrows(), entries)
    }

    fn drop_zeros(&mut self) {
        let mut row_ptr = vec![0; self.dim + 1];
        let mut cols = Vec::with_capacity(self.cols.len());
        let mut vals = Vec::with_capacity(self.vals.len());
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.vals[k] != 0.0 {
                    cols.push(self.cols[k]);
                    vals.push(self.vals[k]);
                }
            }
            row_ptr[i + 1] = cols.len();
        }
        self.row_ptr = row_ptr;
        self.cols = cols;
        self.vals = vals;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    /// `Σ_j a_ij x_j`.
    #[inline]
    pub fn row_dot(&self, i: usize, x: &DVector<f64>) -> f64 {
        self.row(i).map(|(j, v)| v * x[j]).sum()
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim, |i, _| self.row_dot(i, x))
    }

    /// `start_i + Σ_j a_ij x_j` accumulated in compensated arithmetic.
    pub fn row_dot_compensated(&self, i: usize, x: &DVector<f64>, start: f64) -> f64 {
        let mut acc = CompensatedSum::new(start);
        for (j, v) in self.row(i) {
            acc.add_product(v, x[j]);
        }
        acc.value()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_drop_zeros() {
        let m = SparseMatrix::from_triplets(
            3,
            vec![(0, 1, 1.0), (2, 0, 2.0), (0, 1, 0.5), (1, 1, 0.0), (2, 2, -1.0)],
        );
        assert_eq!(m.nnz(), 3);
        let d = m.to_dense();
        assert_eq!(d[(0, 1)], 1.5);
        assert_eq!(d[(1, 1)], 0.0);
        assert_eq!(SparseMatrix::from_dense(&d), m);
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(m.mul_vec(&x), &d * &x);
    }
}
