//! Eigenvalues of dense symmetric matrices: Householder reduction to
//! tridiagonal form followed by implicit QL with shifts.

use alloc::vec;
use alloc::vec::Vec;

use super::dense::DenseMatrix;
use crate::{Error, Result};

const MAX_QL_SWEEPS: usize = 60;

/// All eigenvalues of a symmetric matrix, in ascending order.
///
/// Only the lower triangle is read.
pub fn symmetric_eigenvalues(a: &DenseMatrix) -> Result<Vec<f64>> {
    assert_eq!(a.nrows(), a.ncols());
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut m = a.clone();
    let (mut d, mut e) = tridiagonalize(&mut m);
    tridiagonal_ql(&mut d, &mut e)?;
    d.sort_by(|x, y| x.partial_cmp(y).unwrap_or(core::cmp::Ordering::Equal));
    Ok(d)
}

fn tridiagonalize(a: &mut DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = a.nrows();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let scale: f64 = (0..=l).map(|k| a[(i, k)].abs()).sum();
            if scale == 0.0 {
                e[i] = a[(i, l)];
            } else {
                for k in 0..=l {
                    a[(i, k)] /= scale;
                    h += a[(i, k)] * a[(i, k)];
                }
                let f = a[(i, l)];
                let g = if f >= 0.0 { -libm::sqrt(h) } else { libm::sqrt(h) };
                e[i] = scale * g;
                h -= f * g;
                a[(i, l)] = f - g;
                let mut f = 0.0;
                for j in 0..=l {
                    let mut g = 0.0;
                    for k in 0..=j {
                        g += a[(j, k)] * a[(i, k)];
                    }
                    for k in j + 1..=l {
                        g += a[(k, j)] * a[(i, k)];
                    }
                    e[j] = g / h;
                    f += e[j] * a[(i, j)];
                }
                let hh = f / (h + h);
                for j in 0..=l {
                    let f = a[(i, j)];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        let v = f * e[k] + g * a[(i, k)];
                        a[(j, k)] -= v;
                    }
                }
            }
        } else {
            e[i] = a[(i, l)];
        }
        d[i] = h;
    }
    e[0] = 0.0;
    for i in 0..n {
        d[i] = a[(i, i)];
    }
    (d, e)
}

fn tridiagonal_ql(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > MAX_QL_SWEEPS {
                return Err(Error::EigenNotConverged { index: l });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = libm::hypot(g, 1.0);
            g = d[m] - d[l] + e[l] / (g + if g >= 0.0 { r.abs() } else { -r.abs() });
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = libm::hypot(f, g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_dimensional_laplacian() {
        let n = 20;
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = 2.0;
            if i > 0 {
                a[(i, i - 1)] = -1.0;
                a[(i - 1, i)] = -1.0;
            }
        }
        let ev = symmetric_eigenvalues(&a).unwrap();
        for (k, v) in ev.iter().enumerate() {
            let s = libm::sin((k + 1) as f64 * core::f64::consts::PI / (2.0 * (n + 1) as f64));
            assert!((v - 4.0 * s * s).abs() < 1e-13);
        }
    }

    #[test]
    fn diagonal_and_repeated() {
        let a = DenseMatrix::from_diagonal(&[3.0, -1.0, 3.0, 0.0]);
        assert_eq!(symmetric_eigenvalues(&a).unwrap(), vec![-1.0, 0.0, 3.0, 3.0]);
        let ones = DenseMatrix::from_rows(&[&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]]);
        let ev = symmetric_eigenvalues(&ones).unwrap();
        assert!(ev[0].abs() < 1e-14 && ev[1].abs() < 1e-14 && (ev[2] - 3.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn trace_and_frobenius_preserved(n in 1usize..12, vals in proptest::collection::vec(-5.0f64..5.0, 144)) {
            let mut a = DenseMatrix::zeros(n, n);
            for i in 0..n { for j in 0..=i {
                let v = vals[i * 12 + j];
                a[(i, j)] = v; a[(j, i)] = v;
            }}
            let ev = symmetric_eigenvalues(&a).unwrap();
            let tr: f64 = (0..n).map(|i| a[(i, i)]).sum();
            let fro: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| a[(i, j)] * a[(i, j)]).sum();
            let s1: f64 = ev.iter().sum();
            let s2: f64 = ev.iter().map(|v| v * v).sum();
            prop_assert!((tr - s1).abs() < 1e-10 * (1.0 + fro));
            prop_assert!((fro - s2).abs() < 1e-10 * (1.0 + fro));
            prop_assert!(ev.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
