use alloc::vec;
use alloc::vec::Vec;

use super::sparse::SparseMatrix;
use crate::{Error, Result};

/// Anything that can compute `y = A x`.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for SparseMatrix {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y)
    }
}

/// Approximate inverse `z ≈ A⁻¹ r`.
pub trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

/// Diagonal scaling.
#[derive(Debug, Clone)]
pub struct JacobiPreconditioner {
    inv_diag: Vec<f64>,
}

impl JacobiPreconditioner {
    pub fn new(a: &SparseMatrix) -> Self {
        let inv_diag = a
            .diagonal()
            .into_iter()
            .map(|d| if d != 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        JacobiPreconditioner { inv_diag }
    }
}

impl Preconditioner for JacobiPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((z, r), d) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *z = r * d;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresOptions {
    /// Relative residual target `‖b − A x‖ / ‖b‖`.
    pub tolerance: f64,
    pub restart: usize,
    pub max_iterations: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions {
            tolerance: 1e-8,
            restart: 200,
            max_iterations: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    /// Relative residual estimate after every iteration.
    pub history: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Restarted GMRES with right preconditioning and a zero initial guess.
///
/// The Arnoldi basis is orthogonalized by modified Gram-Schmidt and the
/// least-squares problem is updated with Givens rotations. Convergence is
/// confirmed on the true residual before returning.
pub fn gmres_solve(
    a: &dyn LinearOperator,
    b: &[f64],
    m: &dyn Preconditioner,
    opts: &GmresOptions,
) -> Result<GmresOutcome> {
    let n = a.dim();
    assert_eq!(b.len(), n);
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    let mut history = Vec::new();
    if bnorm == 0.0 {
        return Ok(GmresOutcome {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
            history,
        });
    }
    let restart = opts.restart.max(1);
    let mut r = b.to_vec();
    let mut rel = 1.0;
    let mut total = 0usize;
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    while total < opts.max_iterations {
        let beta = norm(&r);
        rel = beta / bnorm;
        if rel <= opts.tolerance {
            break;
        }
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(restart + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h: Vec<Vec<f64>> = Vec::with_capacity(restart);
        let mut cs: Vec<f64> = Vec::with_capacity(restart);
        let mut sn: Vec<f64> = Vec::with_capacity(restart);
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k = 0;
        while k < restart && total < opts.max_iterations {
            m.apply(&basis[k], &mut z);
            a.apply(&z, &mut w);
            let mut col = vec![0.0; k + 2];
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(&w, v);
                col[i] = hij;
                for (wj, vj) in w.iter_mut().zip(v) {
                    *wj -= hij * vj;
                }
            }
            let hnext = norm(&w);
            col[k + 1] = hnext;
            for i in 0..k {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let denom = libm::hypot(col[k], col[k + 1]);
            let (c, s) = if denom == 0.0 {
                (1.0, 0.0)
            } else {
                (col[k] / denom, col[k + 1] / denom)
            };
            col[k] = c * col[k] + s * col[k + 1];
            col[k + 1] = 0.0;
            g[k + 1] = -s * g[k];
            g[k] *= c;
            cs.push(c);
            sn.push(s);
            h.push(col);
            total += 1;
            k += 1;
            rel = g[k].abs() / bnorm;
            history.push(rel);
            if rel <= opts.tolerance || hnext <= 1e-14 * beta {
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }
        // Back substitution for the k Krylov coefficients.
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= h[j][i] * y[j];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        let mut update = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            for (u, v) in update.iter_mut().zip(&basis[j]) {
                *u += yj * v;
            }
        }
        m.apply(&update, &mut z);
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi += zi;
        }
        a.apply(&x, &mut w);
        for i in 0..n {
            r[i] = b[i] - w[i];
        }
        rel = norm(&r) / bnorm;
        if rel <= opts.tolerance {
            return Ok(GmresOutcome {
                solution: x,
                iterations: total,
                relative_residual: rel,
                history,
            });
        }
    }
    if rel <= opts.tolerance {
        return Ok(GmresOutcome {
            solution: x,
            iterations: total,
            relative_residual: rel,
            history,
        });
    }
    Err(Error::KrylovNotConverged {
        iterations: total,
        relative_residual: rel,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_converges_in_one_iteration() {
        let a = SparseMatrix::identity(10);
        let b: Vec<f64> = (0..10).map(|i| i as f64 + 1.0).collect();
        let out = gmres_solve(&a, &b, &IdentityPreconditioner, &GmresOptions::default()).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.relative_residual < 1e-14);
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let a = SparseMatrix::identity(3);
        let out = gmres_solve(&a, &[0.0; 3], &IdentityPreconditioner, &GmresOptions::default()).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.solution, vec![0.0; 3]);
    }

    #[test]
    fn reports_non_convergence() {
        let mut t = Vec::new();
        for i in 0..30 {
            t.push((i, (i + 1) % 30, 1.0));
        }
        let a = SparseMatrix::from_triplets(30, 30, &t);
        let mut b = vec![0.0; 30];
        b[0] = 1.0;
        let opts = GmresOptions {
            tolerance: 1e-10,
            restart: 5,
            max_iterations: 20,
        };
        match gmres_solve(&a, &b, &IdentityPreconditioner, &opts) {
            Err(Error::KrylovNotConverged {
                iterations, history, ..
            }) => {
                assert_eq!(iterations, 20);
                assert_eq!(history.len(), 20);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn solves_diagonally_dominant(n in 2usize..30, vals in proptest::collection::vec(-1.0f64..1.0, 900),
                                      restart in 1usize..40) {
            let mut t = Vec::new();
            for i in 0..n {
                t.push((i, i, 4.0 + vals[i]));
                if i + 1 < n { t.push((i, i + 1, vals[n + i])); }
                if i > 0 { t.push((i, i - 1, vals[2 * n + i])); }
            }
            let a = SparseMatrix::from_triplets(n, n, &t);
            let b: Vec<f64> = (0..n).map(|i| vals[3 * n + i] + 2.0).collect();
            let opts = GmresOptions { tolerance: 1e-10, restart, max_iterations: 1000 };
            let out = gmres_solve(&a, &b, &JacobiPreconditioner::new(&a), &opts).unwrap();
            let mut y = vec![0.0; n];
            a.matvec(&out.solution, &mut y);
            let res: f64 = y.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            prop_assert!(res <= 1e-10 * norm(&b) * 1.0001);
        }
    }
}
