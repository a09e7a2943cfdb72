//! Direct solvers for banded matrices.
//!
//! Structured grids numbered lexicographically give matrices whose bandwidth
//! is one grid layer, which keeps dense-band factorizations affordable at the
//! sizes used here.

use alloc::vec;
use alloc::vec::Vec;

use super::sparse::SparseMatrix;
use crate::{Error, Result};

/// Cholesky factor `A = L Lᵀ` of a symmetric positive definite band matrix.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    // Row i holds L[i][i - bw ..= i] at offsets 0..=bw.
    band: Vec<f64>,
}

impl BandedCholesky {
    /// Factors the lower triangle of `a`; the upper triangle is ignored.
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols());
        let (bw, _) = a.bandwidths();
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if j <= i {
                    band[i * w + (j + bw - i)] += v;
                }
            }
        }
        for j in 0..n {
            let jlo = j.saturating_sub(bw);
            let rj = j * w;
            let mut s = band[rj + bw];
            for k in jlo..j {
                let l = band[rj + (k + bw - j)];
                s -= l * l;
            }
            if !(s > 0.0) {
                return Err(Error::SingularMatrix { row: j, pivot: s });
            }
            let d = libm::sqrt(s);
            band[rj + bw] = d;
            let iend = (j + bw + 1).min(n);
            for i in j + 1..iend {
                let ri = i * w;
                let klo = i.saturating_sub(bw);
                let mut s = band[ri + (j + bw - i)];
                for k in klo..j {
                    s -= band[ri + (k + bw - i)] * band[rj + (k + bw - j)];
                }
                band[ri + (j + bw - i)] = s / d;
            }
        }
        Ok(BandedCholesky { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let ri = i * w;
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.band[ri + (k + bw - i)] * x[k];
            }
            x[i] = s / self.band[ri + bw];
        }
        for i in (0..n).rev() {
            let s = x[i] / self.band[i * w + bw];
            x[i] = s;
            for k in i.saturating_sub(bw)..i {
                x[k] -= self.band[i * w + (k + bw - i)] * s;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// LU factorization of a general band matrix, with optional partial pivoting.
///
/// Without pivoting the upper bandwidth of `U` stays that of `A`; with
/// pivoting it can grow by the lower bandwidth.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku_eff: usize,
    width: usize,
    band: Vec<f64>,
    multipliers: Vec<f64>,
    perm: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &SparseMatrix, pivoting: bool) -> Result<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols());
        let (kl, ku) = a.bandwidths();
        let ku_eff = if pivoting { ku + kl } else { ku };
        let width = kl + ku_eff + 1;
        let mut band = vec![0.0; n * width];
        let mut row_scale = vec![0.0f64; n];
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                band[i * width + (j + kl - i)] += v;
                row_scale[i] = row_scale[i].max(v.abs());
            }
        }
        let at = |i: usize, j: usize| i * width + (j + kl - i);
        let mut multipliers = vec![0.0; n * kl.max(1)];
        let mut perm = vec![0usize; n];
        for k in 0..n {
            let rows_end = (k + kl + 1).min(n);
            let cols_end = (k + ku_eff + 1).min(n);
            let mut p = k;
            if pivoting {
                let mut best = band[at(k, k)].abs();
                for i in k + 1..rows_end {
                    let v = band[at(i, k)].abs();
                    if v > best {
                        best = v;
                        p = i;
                    }
                }
                if p != k {
                    for j in k..cols_end {
                        band.swap(at(k, j), at(p, j));
                    }
                    row_scale.swap(k, p);
                }
            }
            perm[k] = p;
            let piv = band[at(k, k)];
            if piv.abs() <= 1e-13 * row_scale[k] || piv == 0.0 {
                return Err(Error::SingularMatrix { row: k, pivot: piv });
            }
            for i in k + 1..rows_end {
                let idx = at(i, k);
                let l = band[idx] / piv;
                band[idx] = 0.0;
                multipliers[k * kl + (i - k - 1)] = l;
                if l != 0.0 {
                    let (ri, rk) = (i * width + kl, k * width + kl);
                    for j in k + 1..cols_end {
                        band[ri + j - i] -= l * band[rk + j - k];
                    }
                }
            }
        }
        Ok(BandedLu {
            n,
            kl,
            ku_eff,
            width,
            band,
            multipliers,
            perm,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, kl, w) = (self.n, self.kl, self.width);
        for k in 0..n {
            let p = self.perm[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..(k + kl + 1).min(n) {
                    x[i] -= self.multipliers[k * kl + (i - k - 1)] * xk;
                }
            }
        }
        for i in (0..n).rev() {
            let ri = i * w + kl;
            let mut s = x[i];
            for j in i + 1..(i + self.ku_eff + 1).min(n) {
                s -= self.band[ri + j - i] * x[j];
            }
            x[i] = s / self.band[ri];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
