//! Sparse and dense linear algebra for the coupled system.

mod banded;
mod dense;
mod eigen;
mod gmres;
mod sparse;

pub use banded::{BandedCholesky, BandedLu};
pub use dense::{DenseLu, DenseMatrix};
pub use eigen::symmetric_eigenvalues;
pub use gmres::{
    gmres_solve, GmresOptions, GmresOutcome, IdentityPreconditioner, JacobiPreconditioner, LinearOperator,
    Preconditioner,
};
pub use sparse::SparseMatrix;

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Solves `A x = b` with a pivoted band LU and checks the residual.
pub fn direct_solve(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let lu = BandedLu::factor(a, true)?;
    let x = lu.solve(b);
    let mut r = vec![0.0; b.len()];
    a.matvec(&x, &mut r);
    let bn = libm::sqrt(b.iter().map(|v| v * v).sum());
    let rn = libm::sqrt(r.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum());
    if bn > 0.0 && rn > 1e-8 * bn {
        let (row, pivot) = (0..a.nrows())
            .map(|i| (i, a.get(i, i)))
            .fold(
                (0, f64::INFINITY),
                |m, (i, d)| {
                    if d.abs() < m.1.abs() {
                        (i, d)
                    } else {
                        m
                    }
                },
            );
        return Err(Error::SingularMatrix { row, pivot });
    }
    Ok(x)
}

/// Full spectrum of a symmetric matrix with its extremal values.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Smallest eigenvalue above `1e-10 · e_max`.
    pub e_min: f64,
    pub e_max: f64,
}

impl Spectrum {
    pub fn condition_number(&self) -> f64 {
        self.e_max / self.e_min
    }
}

pub fn extremal_eigenvalues(a: &DenseMatrix) -> Result<Spectrum> {
    let eigenvalues = symmetric_eigenvalues(a)?;
    let e_max = eigenvalues.last().copied().unwrap_or(0.0);
    let e_min = eigenvalues
        .iter()
        .copied()
        .find(|&e| e > 1e-10 * e_max.abs())
        .unwrap_or(0.0);
    Ok(Spectrum {
        eigenvalues,
        e_min,
        e_max,
    })
}

/// Approximation of the flow-block Schur complement used by [`BlockPreconditioner`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlowBlockApproximation {
    /// The stabilized flow block itself.
    Plain,
    /// Flow block minus a diagonal estimate of the poroelastic coupling.
    #[default]
    FixedStress,
}

/// Block upper-triangular preconditioner `[[A_uu, A_uf], [0, Ŝ_f]]`.
///
/// `A_uu` is solved with a cached band Cholesky factor and `Ŝ_f` with a band
/// LU of the flow block reordered cell by cell as `(s, p)`.
pub struct BlockPreconditioner<'a> {
    uu: &'a BandedCholesky,
    us: &'a SparseMatrix,
    up: &'a SparseMatrix,
    flow: BandedLu,
    // Stacked flow index -> interleaved index.
    perm: Vec<usize>,
    nu: usize,
    ns: usize,
}

/// Position of each stacked `[s, p]` unknown in the cell-interleaved order.
pub fn interleave_permutation(ns: usize, np: usize) -> Vec<usize> {
    if ns == 0 {
        return (0..np).collect();
    }
    assert_eq!(ns, np);
    (0..ns).map(|c| 2 * c).chain((0..np).map(|c| 2 * c + 1)).collect()
}

impl<'a> BlockPreconditioner<'a> {
    /// `flow` is `Ŝ_f` in stacked `[s, p]` order.
    pub fn new(
        uu: &'a BandedCholesky,
        us: &'a SparseMatrix,
        up: &'a SparseMatrix,
        flow: &SparseMatrix,
    ) -> Result<Self> {
        let nu = uu.dim();
        let ns = us.ncols();
        let np = up.ncols();
        let perm = interleave_permutation(ns, np);
        let mut t = Vec::with_capacity(flow.nnz());
        for i in 0..flow.nrows() {
            let (cols, vals) = flow.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                t.push((perm[i], perm[j], v));
            }
        }
        let permuted = SparseMatrix::from_triplets(ns + np, ns + np, &t);
        let lu = match BandedLu::factor(&permuted, false) {
            Ok(f) => f,
            Err(_) => BandedLu::factor(&permuted, true)?,
        };
        Ok(BlockPreconditioner {
            uu,
            us,
            up,
            flow: lu,
            perm,
            nu,
            ns,
        })
    }
}

impl Preconditioner for BlockPreconditioner<'_> {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let nu = self.nu;
        let mut rf = vec![0.0; r.len() - nu];
        for (k, &pk) in self.perm.iter().enumerate() {
            rf[pk] = r[nu + k];
        }
        self.flow.solve_in_place(&mut rf);
        for (k, &pk) in self.perm.iter().enumerate() {
            z[nu + k] = rf[pk];
        }
        let (zu, zf) = z.split_at_mut(nu);
        zu.copy_from_slice(&r[..nu]);
        let (zs, zp) = zf.split_at(self.ns);
        self.us.matvec_add(-1.0, zs, zu);
        self.up.matvec_add(-1.0, zp, zu);
        self.uu.solve_in_place(zu);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_solve_small() {
        let a = SparseMatrix::from_dense(&DenseMatrix::from_rows(&[&[2.0, 0.0], &[0.0, 4.0]]));
        assert_eq!(direct_solve(&a, &[2.0, 4.0]).unwrap(), vec![1.0, 1.0]);
        let id = SparseMatrix::identity(4);
        let b = [1.0, -2.0, 3.0, 0.5];
        assert_eq!(direct_solve(&id, &b).unwrap(), b.to_vec());
    }

    #[test]
    fn direct_solve_reports_singular() {
        let a = SparseMatrix::from_dense(&DenseMatrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]));
        assert!(matches!(
            direct_solve(&a, &[1.0, 2.0]),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn diagonal_extremes() {
        let s = extremal_eigenvalues(&DenseMatrix::from_diagonal(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!((s.e_min, s.e_max), (1.0, 3.0));
        let s = extremal_eigenvalues(&DenseMatrix::from_diagonal(&[0.0, 1.0, 2.0])).unwrap();
        assert_eq!(s.e_min, 1.0);
    }

    #[test]
    fn exact_diagonal_preconditioner_takes_one_iteration() {
        let d = [1.0, 5.0, 9.0, 0.25];
        let a = SparseMatrix::from_dense(&DenseMatrix::from_diagonal(&d));
        let out = gmres_solve(&a, &[1.0; 4], &JacobiPreconditioner::new(&a), &GmresOptions::default()).unwrap();
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn block_preconditioner_is_exact_for_triangular_systems() {
        // A = [[K, B], [0, S]]: the preconditioner is the exact inverse.
        let k = SparseMatrix::from_dense(&DenseMatrix::from_rows(&[&[4.0, 1.0], &[1.0, 3.0]]));
        let us = SparseMatrix::from_dense(&DenseMatrix::from_rows(&[&[0.5], &[0.0]]));
        let up = SparseMatrix::from_dense(&DenseMatrix::from_rows(&[&[1.0], &[-2.0]]));
        let flow = SparseMatrix::from_dense(&DenseMatrix::from_rows(&[&[2.0, 1.0], &[0.5, 3.0]]));
        let chol = BandedCholesky::factor(&k).unwrap();
        let pc = BlockPreconditioner::new(&chol, &us, &up, &flow).unwrap();
        let full = DenseMatrix::from_rows(&[
            &[4.0, 1.0, 0.5, 1.0],
            &[1.0, 3.0, 0.0, -2.0],
            &[0.0, 0.0, 2.0, 1.0],
            &[0.0, 0.0, 0.5, 3.0],
        ]);
        let x = [1.0, -1.0, 2.0, 0.5];
        let b = full.matvec(&x);
        let mut z = [0.0; 4];
        pc.apply(&b, &mut z);
        for (zi, xi) in z.iter().zip(&x) {
            assert!((zi - xi).abs() < 1e-13);
        }
    }
}
