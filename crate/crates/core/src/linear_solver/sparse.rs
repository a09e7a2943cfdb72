use alloc::vec;
use alloc::vec::Vec;

use super::dense::DenseMatrix;
use crate::{Error, Result};

/// Compressed sparse row matrix with an immutable structure.
///
/// Column indices within a row are sorted and unique. Values can be reset and
/// accumulated into, but never outside the stored structure.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Zero matrix with the given per-row column sets (sorted and deduplicated here).
    pub fn from_pattern(nrows: usize, ncols: usize, mut rows: Vec<Vec<usize>>) -> Self {
        assert_eq!(rows.len(), nrows);
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in rows.iter_mut() {
            row.sort_unstable();
            row.dedup();
            debug_assert!(row.last().is_none_or(|&c| c < ncols));
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        SparseMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows = vec![Vec::new(); nrows];
        for &(i, j, _) in triplets {
            rows[i].push(j);
        }
        let mut m = Self::from_pattern(nrows, ncols, rows);
        for &(i, j, v) in triplets {
            m.add(i, j, v).expect("pattern built from the same triplets");
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &t)
    }

    pub fn from_dense(a: &DenseMatrix) -> Self {
        let mut t = Vec::new();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                let v = a[(i, j)];
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(a.nrows(), a.ncols(), &t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Number of stored entries (structural nonzeros).
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn row_mut(&mut self, i: usize) -> (&[usize], &mut [f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &mut self.values[r])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        let cols = &self.col_idx[start..self.row_ptr[i + 1]];
        cols.binary_search(&j).ok().map(|k| start + k)
    }

    /// Accumulates `v` into entry `(i, j)`, which must be part of the structure.
    pub fn add(&mut self, i: usize, j: usize, v: f64) -> Result<()> {
        match self.position(i, j) {
            Some(k) => {
                self.values[k] += v;
                Ok(())
            }
            None => Err(Error::PatternViolation { row: i, col: j }),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn set_zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    /// Zeroes every stored value of row `i`.
    pub fn zero_row(&mut self, i: usize) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.values[r].iter_mut().for_each(|v| *v = 0.0);
    }

    /// Structural pattern equality.
    pub fn same_pattern(&self, other: &SparseMatrix) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = s;
        }
    }

    /// `y += alpha A x`.
    pub fn matvec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for i in 0..self.nrows {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[i] += alpha * s;
        }
    }

    /// `y += alpha Aᵀ x`.
    pub fn matvec_transpose_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for i in 0..self.nrows {
            let xi = alpha * x[i];
            if xi == 0.0 {
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[k]] += self.values[k] * xi;
            }
        }
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut rows = vec![Vec::new(); self.ncols];
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                rows[self.col_idx[k]].push(i);
            }
        }
        let mut t = SparseMatrix::from_pattern(self.ncols, self.nrows, rows);
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let pos = t.position(self.col_idx[k], i).unwrap();
                t.values[pos] += self.values[k];
            }
        }
        t
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                d[(i, self.col_idx[k])] += self.values[k];
            }
        }
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// `‖A − Aᵀ‖_max ≤ rel_tol · ‖A‖_max`.
    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        let scale = self.max_abs();
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                if (self.values[k] - self.get(j, i)).abs() > rel_tol * scale {
                    return false;
                }
            }
        }
        true
    }

    /// Lower and upper bandwidth of the stored structure.
    pub fn bandwidths(&self) -> (usize, usize) {
        let (mut lo, mut up) = (0usize, 0usize);
        for i in 0..self.nrows {
            for &j in &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]] {
                if j < i {
                    lo = lo.max(i - j);
                } else {
                    up = up.max(j - i);
                }
            }
        }
        (lo, up)
    }

    /// Submatrix with the given rows and columns (in the given order).
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> SparseMatrix {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (new, &old) in cols.iter().enumerate() {
            col_map[old] = new;
        }
        let mut t = Vec::new();
        for (ni, &i) in rows.iter().enumerate() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let nj = col_map[self.col_idx[k]];
                if nj != usize::MAX {
                    t.push((ni, nj, self.values[k]));
                }
            }
        }
        SparseMatrix::from_triplets(rows.len(), cols.len(), &t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn add_outside_pattern_is_rejected() {
        let mut m = SparseMatrix::from_pattern(2, 2, vec![vec![0], vec![0, 1]]);
        assert!(m.add(1, 1, 2.0).is_ok());
        assert_eq!(m.add(0, 1, 1.0), Err(Error::PatternViolation { row: 0, col: 1 }));
        assert_eq!(m.get(1, 1), 2.0);
        assert_eq!(m.get(0, 1), 0.0);
    }

    #[test]
    fn symmetry_and_bandwidth() {
        let m = SparseMatrix::from_triplets(3, 3, &[(0, 0, 2.0), (0, 2, 1.0), (2, 0, 1.0), (1, 1, 1.0)]);
        assert!(m.is_symmetric(1e-12));
        assert_eq!(m.bandwidths(), (2, 2));
        let n = SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.5)]);
        assert!(!n.is_symmetric(1e-12));
    }

    proptest! {
        #[test]
        fn transpose_matches_dense(entries in proptest::collection::vec((0usize..5, 0usize..4, -10.0f64..10.0), 0..20),
                                   x in proptest::collection::vec(-1.0f64..1.0, 5)) {
            let a = SparseMatrix::from_triplets(5, 4, &entries);
            let at = a.transpose();
            let d = a.to_dense();
            for i in 0..5 { for j in 0..4 { prop_assert_eq!(at.get(j, i), d[(i, j)]); } }
            let mut y1 = vec![0.0; 4];
            at.matvec(&x, &mut y1);
            let mut y2 = vec![0.0; 4];
            a.matvec_transpose_add(1.0, &x, &mut y2);
            for k in 0..4 { prop_assert!((y1[k] - y2[k]).abs() < 1e-12); }
        }
    }
}
