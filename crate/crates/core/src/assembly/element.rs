//! Q1 element integrals on an axis-aligned box cell.
//!
//! All cells of a structured grid are translates of one another, so a single
//! kernel serves the whole mesh.

use alloc::vec;
use alloc::vec::Vec;

/// Element matrices for one cell of size `spacing`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementKernel {
    pub dim: usize,
    pub nodes: usize,
    pub volume: f64,
    /// Row-major `(nodes·dim)²` stiffness, local dof `a·dim + i`.
    pub stiffness: Vec<f64>,
    /// `∫ ∂N_a/∂x_i`, per local dof.
    pub divergence: Vec<f64>,
    /// `∫ N_a`, per node.
    pub lumped: Vec<f64>,
}

fn gauss_points(dim: usize) -> Vec<[f64; 3]> {
    let g = 0.5 / libm::sqrt(3.0);
    let pts = [0.5 - g, 0.5 + g];
    let mut out = Vec::new();
    let nz = if dim == 3 { 2 } else { 1 };
    for kz in 0..nz {
        for ky in 0..2 {
            for kx in 0..2 {
                out.push([pts[kx], pts[ky], if dim == 3 { pts[kz] } else { 0.5 }]);
            }
        }
    }
    out
}

/// Shape function values and physical gradients at reference point `xi`.
fn shape(dim: usize, h: &[f64; 3], xi: &[f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
    let n = 1 << dim;
    let mut val = vec![0.0; n];
    let mut grad = vec![[0.0; 3]; n];
    for a in 0..n {
        let mut f = [0.0; 3];
        let mut df = [0.0; 3];
        for d in 0..dim {
            let bit = (a >> d) & 1 == 1;
            f[d] = if bit { xi[d] } else { 1.0 - xi[d] };
            df[d] = if bit { 1.0 / h[d] } else { -1.0 / h[d] };
        }
        val[a] = (0..dim).map(|d| f[d]).product();
        for d in 0..dim {
            grad[a][d] = df[d] * (0..dim).filter(|&e| e != d).map(|e| f[e]).product::<f64>();
        }
    }
    (val, grad)
}

impl ElementKernel {
    /// Plane strain in 2D, with the out-of-plane thickness `spacing[2]`.
    pub fn new(dim: usize, spacing: [f64; 3], lambda: f64, shear: f64) -> Self {
        let n = 1 << dim;
        let nd = n * dim;
        let volume: f64 = (0..dim).map(|d| spacing[d]).product::<f64>() * if dim == 2 { spacing[2] } else { 1.0 };
        let pts = gauss_points(dim);
        let w = volume / pts.len() as f64;
        let mut stiffness = vec![0.0; nd * nd];
        let mut divergence = vec![0.0; nd];
        let mut lumped = vec![0.0; n];
        for xi in &pts {
            let (val, grad) = shape(dim, &spacing, xi);
            for a in 0..n {
                lumped[a] += w * val[a];
                for i in 0..dim {
                    divergence[a * dim + i] += w * grad[a][i];
                }
            }
            for a in 0..n {
                for b in 0..n {
                    let dot: f64 = (0..dim).map(|d| grad[a][d] * grad[b][d]).sum();
                    for i in 0..dim {
                        for j in 0..dim {
                            let mut v = lambda * grad[a][i] * grad[b][j] + shear * grad[a][j] * grad[b][i];
                            if i == j {
                                v += shear * dot;
                            }
                            stiffness[(a * dim + i) * nd + b * dim + j] += w * v;
                        }
                    }
                }
            }
        }
        ElementKernel {
            dim,
            nodes: n,
            volume,
            stiffness,
            divergence,
            lumped,
        }
    }

    pub fn dofs(&self) -> usize {
        self.nodes * self.dim
    }

    pub fn k(&self, r: usize, c: usize) -> f64 {
        self.stiffness[r * self.dofs() + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rigid_modes_are_in_the_kernel() {
        for dim in [2, 3] {
            let ek = ElementKernel::new(dim, [0.7, 1.3, 0.4], 2.0, 0.8);
            let nd = ek.dofs();
            // Translation along each axis.
            for i in 0..dim {
                let mut u = vec![0.0; nd];
                for a in 0..ek.nodes {
                    u[a * dim + i] = 1.0;
                }
                for r in 0..nd {
                    let f: f64 = (0..nd).map(|c| ek.k(r, c) * u[c]).sum();
                    assert!(f.abs() < 1e-12);
                }
            }
            // Symmetry.
            for r in 0..nd {
                for c in 0..nd {
                    assert!((ek.k(r, c) - ek.k(c, r)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn divergence_of_linear_field() {
        // u = (x, 0, 0) on a box: ∫ div u = V.
        let h = [0.5, 2.0, 1.5];
        let ek = ElementKernel::new(3, h, 1.0, 1.0);
        let mut s = 0.0;
        for a in 0..8 {
            let x = if a & 1 == 1 { h[0] } else { 0.0 };
            s += ek.divergence[a * 3] * x;
        }
        assert!((s - ek.volume).abs() < 1e-14);
        assert!((ek.lumped.iter().sum::<f64>() - ek.volume).abs() < 1e-14);
    }

    #[test]
    fn uniaxial_strain_energy() {
        // u = (ε x, 0): energy density ½ (λ + 2G) ε², total = ½ uᵀ K u.
        let (l, g, eps) = (3.0, 2.0, 0.1);
        let h = [1.0, 1.0, 1.0];
        let ek = ElementKernel::new(2, h, l, g);
        let mut u = [0.0; 8];
        for a in 0..4 {
            u[a * 2] = if a & 1 == 1 { eps } else { 0.0 };
        }
        let e: f64 = (0..8)
            .map(|r| (0..8).map(|c| u[r] * ek.k(r, c) * u[c]).sum::<f64>())
            .sum();
        assert!((0.5 * e - 0.5 * (l + 2.0 * g) * eps * eps).abs() < 1e-14);
    }
}
