//! Stability analysis of the incompressible limit: the single-macroelement
//! patch test, the recommended stabilization constant, and spectra of the
//! volume-scaled pressure Schur complement.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::assembly::{Discretization, SystemState};
use crate::constitutive::{Compressibility, FluidModel, RelPermModel, SolidModel};
use crate::linear_solver::{extremal_eigenvalues, BandedCholesky, DenseMatrix, SparseMatrix};
use crate::mesh::{build_structured_mesh, Side};
use crate::problem::{DisplacementCondition, FlowModel, ProblemDefinition, SideCondition, StabilizationSpec};
use crate::solver::{Simulator, SolverOptions, TimeSchedule};
use crate::{Error, Result};

/// Recommended stabilization constant `b² · 9 / (32 (λ + 4G))`.
pub fn tau_star(lambda: f64, shear: f64, biot: f64) -> f64 {
    biot * biot * 9.0 / (32.0 * (lambda + 4.0 * shear))
}

/// Interval of `τ` minimizing the condition number of the cubic patch.
pub fn tau_admissible_range(lambda: f64, shear: f64) -> (f64, f64) {
    let d = lambda + 4.0 * shear;
    (9.0 / (64.0 * d), 9.0 / (32.0 * d))
}

/// Eigenvalues of the patch Schur complement.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSpectrum {
    /// Ascending; the first one is the constant pressure mode.
    pub eigenvalues: Vec<f64>,
    /// `e_max / e_2`, infinite when a spurious mode is singular.
    pub condition_number: f64,
    pub spacing: [f64; 3],
    pub lambda: f64,
    pub shear: f64,
    pub tau: f64,
}

impl PatchSpectrum {
    fn new(mut eigenvalues: Vec<f64>, spacing: [f64; 3], lambda: f64, shear: f64, tau: f64) -> Self {
        eigenvalues.sort_by(f64::total_cmp);
        let e_max = *eigenvalues.last().unwrap();
        let e2 = eigenvalues[1];
        let condition_number = if e2 > 1e-12 * e_max { e_max / e2 } else { f64::INFINITY };
        PatchSpectrum {
            eigenvalues,
            condition_number,
            spacing,
            lambda,
            shear,
            tau,
        }
    }
}

/// Closed-form spectrum of the rigid, impermeable 2×2×2 patch.
pub fn patch_eigenvalues_analytic(h: [f64; 3], lambda: f64, shear: f64, tau: f64) -> PatchSpectrum {
    let v = h[0] * h[1] * h[2];
    let axy = h[0] * h[1];
    let axz = h[0] * h[2];
    let ayz = h[1] * h[2];
    let m = lambda + 2.0 * shear;
    let g = shear;
    let e = vec![
        0.0,
        4.0 * v * tau,
        4.0 * v * tau,
        4.0 * v * tau,
        6.0 * v * tau,
        v * (2.0 * tau + 9.0 * axy * axy / (16.0 * (axy * axy * m + axz * axz * g + ayz * ayz * g))),
        v * (2.0 * tau + 9.0 * axz * axz / (16.0 * (axy * axy * g + axz * axz * m + ayz * ayz * g))),
        v * (2.0 * tau + 9.0 * ayz * ayz / (16.0 * (axy * axy * g + axz * axz * g + ayz * ayz * m))),
    ];
    PatchSpectrum::new(e, h, lambda, shear, tau)
}

/// Reduced displacement-pressure system of the incompressible limit,
/// `[[A_uu, A_up], [A_upᵀ, C]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleSystem {
    pub a_uu: SparseMatrix,
    pub a_up: SparseMatrix,
    pub c: SparseMatrix,
}

impl SaddleSystem {
    pub fn to_sparse(&self) -> SparseMatrix {
        let nu = self.a_uu.nrows();
        let np = self.c.nrows();
        let mut t = Vec::new();
        for i in 0..nu {
            let (cols, vals) = self.a_uu.row(i);
            t.extend(cols.iter().zip(vals).map(|(&j, &v)| (i, j, v)));
            let (cols, vals) = self.a_up.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                t.push((i, nu + j, v));
                t.push((nu + j, i, v));
            }
        }
        for i in 0..np {
            let (cols, vals) = self.c.row(i);
            t.extend(cols.iter().zip(vals).map(|(&j, &v)| (nu + i, nu + j, v)));
        }
        SparseMatrix::from_triplets(nu + np, nu + np, &t)
    }
}

/// Assembled `C = Σ_f −τ V ⟦φ_i⟧⟦φ_j⟧` over macroelement-interior faces.
pub fn stabilization_matrix(disc: &Discretization, tau: f64) -> SparseMatrix {
    let mut c = disc.jacobian_template().pp.clone();
    c.set_zero();
    let a = tau * disc.kernel.volume;
    for f in disc.mesh().faces() {
        if let (true, Some(l)) = (f.macro_interior, f.l) {
            for (i, j, v) in [(f.k, f.k, -a), (l, l, -a), (f.k, l, a), (l, f.k, a)] {
                c.add(i, j, v).expect("stabilization stays on the two-point stencil");
            }
        }
    }
    c
}

fn check_incompressible(problem: &ProblemDefinition) -> Result<()> {
    let mut bad = Vec::new();
    if problem.solid.grain != Compressibility::Incompressible {
        bad.push("grains");
    }
    if problem.wetting.compressibility != Compressibility::Incompressible {
        bad.push("wetting fluid");
    }
    if problem.is_two_phase() && problem.nonwetting.compressibility != Compressibility::Incompressible {
        bad.push("non-wetting fluid");
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::ContractViolation(format!(
            "incompressible-limit analysis needs incompressible constituents; compressible: {}",
            bad.join(", ")
        )))
    }
}

/// Saddle-point system of the incompressible limit, stabilized with the
/// problem's `τ`.
pub fn assemble_incompressible_saddle(problem: &ProblemDefinition) -> Result<SaddleSystem> {
    check_incompressible(problem)?;
    let disc = Discretization::new(problem)?;
    Ok(SaddleSystem {
        a_uu: disc.elastic_stiffness().clone(),
        a_up: disc.coupling_matrix(),
        c: stabilization_matrix(&disc, problem.stabilization.effective_tau()),
    })
}

/// Dense `S = A_upᵀ A_uu⁻¹ A_up − C` restricted to the cells in `keep`.
pub fn schur_complement(saddle: &SaddleSystem, keep: &[usize]) -> Result<DenseMatrix> {
    let chol = BandedCholesky::factor(&saddle.a_uu)?;
    let nu = saddle.a_uu.nrows();
    let upt = saddle.a_up.transpose();
    let n = keep.len();
    let mut s = DenseMatrix::zeros(n, n);
    let mut col = vec![0.0; nu];
    let mut y = vec![0.0; saddle.a_up.ncols()];
    for (jj, &j) in keep.iter().enumerate() {
        col.iter_mut().for_each(|v| *v = 0.0);
        let (rows, vals) = upt.row(j);
        for (&r, &v) in rows.iter().zip(vals) {
            col[r] = v;
        }
        chol.solve_in_place(&mut col);
        upt.matvec(&col, &mut y);
        for (ii, &i) in keep.iter().enumerate() {
            s[(ii, jj)] = y[i] - saddle.c.get(i, j);
        }
    }
    s.symmetrize();
    Ok(s)
}

fn solid_from_lame(lambda: f64, shear: f64) -> Result<SolidModel> {
    let young = shear * (3.0 * lambda + 2.0 * shear) / (lambda + shear);
    let poisson = lambda / (2.0 * (lambda + shear));
    let mut solid = SolidModel::new(young, poisson, Compressibility::Incompressible, 0.0, 0.0)?;
    solid.lambda = lambda;
    solid.shear = shear;
    Ok(solid)
}

/// Single-macroelement problem with clamped, impermeable boundaries.
pub fn patch_problem(dim: usize, h: [f64; 3], lambda: f64, shear: f64, tau: f64) -> Result<ProblemDefinition> {
    let extent: Vec<f64> = (0..dim).map(|a| 2.0 * h[a]).collect();
    let counts = vec![2; dim];
    let mesh = build_structured_mesh(&extent, &counts)?;
    let solid = solid_from_lame(lambda, shear)?;
    let fluid = FluidModel::new(1.0, Compressibility::Incompressible, 1.0, 0.0)?;
    let n = mesh.num_cells();
    let boundary = Side::sides(dim)
        .iter()
        .map(|&s| SideCondition::new(s, DisplacementCondition::Clamped, None))
        .collect();
    let stabilization = StabilizationSpec::from_tau(tau, &solid)?;
    Ok(ProblemDefinition {
        name: String::from("patch"),
        mesh,
        solid,
        wetting: fluid,
        nonwetting: fluid,
        flow: FlowModel::SinglePhase,
        relperm: RelPermModel::default(),
        porosity: vec![0.0; n],
        permeability: vec![0.0; n],
        boundary,
        sources: Vec::new(),
        wells: Vec::new(),
        gravity: 0.0,
        stabilization,
        schedule: TimeSchedule::uniform(1.0, 1.0),
        initial_pressure: 0.0,
        initial_saturation: 1.0,
    })
}

/// Patch-test spectrum from the assembled system (2D or 3D, unit thickness in 2D).
pub fn patch_test_numeric(dim: usize, h: [f64; 3], lambda: f64, shear: f64, tau: f64) -> Result<PatchSpectrum> {
    let problem = patch_problem(dim, h, lambda, shear, tau)?;
    let saddle = assemble_incompressible_saddle(&problem)?;
    let keep: Vec<usize> = (0..problem.mesh.num_cells()).collect();
    let s = schur_complement(&saddle, &keep)?;
    let spec = extremal_eigenvalues(&s)?;
    let sp = problem.mesh.spacing();
    Ok(PatchSpectrum::new(spec.eigenvalues, sp, lambda, shear, tau))
}

/// Extremal eigenvalues of `S' = Q⁻¹ S`.
#[derive(Debug, Clone, PartialEq)]
pub struct SchurReport {
    pub e_min: f64,
    pub e_max: f64,
    pub condition_number: f64,
    pub cells_per_side: usize,
    pub c: f64,
    pub tau: f64,
    /// The constant mode was projected out.
    pub deflated: bool,
    pub eigenvalues: Vec<f64>,
}

/// Removes the direction `1/√n` from a symmetric matrix with a Householder
/// reflection and returns the trailing `(n−1)×(n−1)` block.
fn deflate_constant(s: &DenseMatrix) -> DenseMatrix {
    let n = s.nrows();
    let inv = 1.0 / libm::sqrt(n as f64);
    // w = (v − e₁) / ‖v − e₁‖ maps v = 1/√n onto e₁.
    let mut w = vec![inv; n];
    w[0] -= 1.0;
    let wn = libm::sqrt(w.iter().map(|x| x * x).sum());
    w.iter_mut().for_each(|x| *x /= wn);
    // H S H with H = I − 2wwᵀ.
    let sw = s.matvec(&w);
    let wsw: f64 = w.iter().zip(&sw).map(|(a, b)| a * b).sum();
    let mut out = DenseMatrix::zeros(n - 1, n - 1);
    for i in 1..n {
        for j in 1..n {
            out[(i - 1, j - 1)] = s[(i, j)] - 2.0 * w[i] * sw[j] - 2.0 * sw[i] * w[j] + 4.0 * wsw * w[i] * w[j];
        }
    }
    out
}

/// Spectrum of the volume-scaled Schur complement of an incompressible
/// single-phase problem, with stabilization constant `tau`.
///
/// Pressure-controlled cells are removed. Without them, a constant null mode
/// (all pressures equal) is deflated when present.
pub fn scaled_schur_spectrum(problem: &ProblemDefinition, tau: f64) -> Result<SchurReport> {
    let mut pr = problem.clone();
    pr.stabilization = StabilizationSpec::from_tau(tau, &pr.solid)?;
    let saddle = assemble_incompressible_saddle(&pr)?;
    let controlled = pr.pressure_controlled_cells();
    let keep: Vec<usize> = (0..pr.mesh.num_cells()).filter(|c| !controlled.contains(c)).collect();
    let mut s = schur_complement(&saddle, &keep)?;
    let v = pr.mesh.cell_volume();
    for i in 0..s.nrows() {
        s.row_mut(i).iter_mut().for_each(|x| *x /= v);
    }
    let mut deflated = false;
    if controlled.is_empty() {
        let ones = vec![1.0; s.nrows()];
        let r = s.matvec(&ones);
        let rn = libm::sqrt(r.iter().map(|x| x * x).sum());
        if rn <= 1e-10 * s.max_abs() * libm::sqrt(s.nrows() as f64) {
            s = deflate_constant(&s);
            deflated = true;
        }
    }
    let spec = extremal_eigenvalues(&s)?;
    Ok(SchurReport {
        e_min: spec.e_min,
        e_max: spec.e_max,
        condition_number: spec.condition_number(),
        cells_per_side: pr.mesh.cell_counts()[0],
        c: pr.stabilization.c,
        tau,
        deflated,
        eigenvalues: spec.eigenvalues,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub c: f64,
    pub report: SchurReport,
    /// GMRES iterations of the first Newton iteration of the first step;
    /// `None` when GMRES failed.
    pub krylov_iterations: Option<usize>,
}

/// Schur spectrum and a representative Krylov count for each `τ = c τ*`.
pub fn stabilization_sweep(problem: &ProblemDefinition, c_values: &[f64]) -> Result<Vec<SweepRow>> {
    let ts = tau_star(problem.solid.lambda, problem.solid.shear, problem.solid.biot);
    let mut rows = Vec::with_capacity(c_values.len());
    for &c in c_values {
        if !(c >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "stabilization ratio must be >= 0, got {c}"
            )));
        }
        let report = scaled_schur_spectrum(problem, c * ts)?;
        let mut pr = problem.clone();
        pr.stabilization = StabilizationSpec::from_ratio(c, &pr.solid)?;
        let krylov_iterations = first_step_krylov(&pr)?;
        rows.push(SweepRow {
            c,
            report,
            krylov_iterations,
        });
    }
    Ok(rows)
}

/// GMRES iterations of the first Newton iteration of the first time step.
pub fn first_step_krylov(problem: &ProblemDefinition) -> Result<Option<usize>> {
    let sim = Simulator::new(problem, SolverOptions::default())?;
    let initial = SystemState::initial(problem);
    let dt = problem.schedule.initial_dt.min(problem.schedule.end_time);
    match sim.krylov_iterations_at(&initial, dt) {
        Ok(n) => Ok(Some(n)),
        Err(Error::KrylovNotConverged { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tau_star_examples() {
        assert!((tau_star(1.0, 1.0, 1.0) - 0.05625).abs() < 1e-15);
        assert_eq!(tau_star(1.0, 1.0, 0.0), 0.0);
        let (l, g) = (1e5 * 0.1 / (1.1 * 0.8), 1e5 / 2.2);
        assert!((tau_star(l, g, 1.0) - 1.456e-6).abs() < 1e-9);
        let (lo, hi) = tau_admissible_range(1.0, 1.0);
        assert!((lo - 0.028125).abs() < 1e-15 && (hi - 0.05625).abs() < 1e-15);
    }

    #[test]
    fn analytic_cube_values() {
        let s = patch_eigenvalues_analytic([1.0; 3], 1.0, 1.0, 0.0);
        assert_eq!(&s.eigenvalues[..5], &[0.0; 5]);
        for e in &s.eigenvalues[5..] {
            assert!((e - 0.1125).abs() < 1e-15);
        }
        let s = patch_eigenvalues_analytic([1.0; 3], 1.0, 1.0, tau_star(1.0, 1.0, 1.0));
        assert!((s.condition_number - 1.5).abs() < 1e-12);
    }

    #[test]
    fn unstabilized_patch_ranks() {
        let s3 = patch_test_numeric(3, [1.0; 3], 1.0, 1.0, 0.0).unwrap();
        let big = s3.eigenvalues[7];
        assert_eq!(s3.eigenvalues.iter().filter(|e| e.abs() > 1e-12 * big).count(), 3);
        let s2 = patch_test_numeric(2, [1.0; 3], 1.0, 1.0, 0.05).unwrap();
        let big = s2.eigenvalues[3];
        assert_eq!(s2.eigenvalues.iter().filter(|e| e.abs() > 1e-12 * big).count(), 3);
    }

    #[test]
    fn saddle_lower_block_is_the_stabilization() {
        let p = patch_problem(3, [1.0; 3], 1.0, 1.0, 0.0).unwrap();
        let sys = assemble_incompressible_saddle(&p).unwrap();
        assert_eq!(sys.c.max_abs(), 0.0);
        let p = patch_problem(3, [1.0; 3], 1.0, 1.0, 0.1).unwrap();
        let sys = assemble_incompressible_saddle(&p).unwrap();
        for i in 0..8 {
            assert!((sys.c.get(i, i) + 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn compressible_saddle_is_rejected() {
        let mut p = patch_problem(2, [1.0; 3], 1.0, 1.0, 0.0).unwrap();
        p.wetting.compressibility = Compressibility::BulkModulus(1e9);
        assert!(matches!(
            assemble_incompressible_saddle(&p),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn deflation_removes_constant_mode() {
        let s = DenseMatrix::from_rows(&[&[1.0, -1.0, 0.0], &[-1.0, 2.0, -1.0], &[0.0, -1.0, 1.0]]);
        let d = deflate_constant(&s);
        let e = crate::linear_solver::symmetric_eigenvalues(&d).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-12 && (e[1] - 3.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn numeric_patch_matches_analytic(hx in 0.2f64..3.0, hy in 0.2f64..3.0, hz in 0.2f64..3.0,
                                          lambda in 0.0f64..10.0, shear in 0.1f64..10.0, tau in 0.0f64..0.2) {
            let a = patch_eigenvalues_analytic([hx, hy, hz], lambda, shear, tau);
            let n = patch_test_numeric(3, [hx, hy, hz], lambda, shear, tau).unwrap();
            let scale = a.eigenvalues[7];
            for (x, y) in a.eigenvalues.iter().zip(&n.eigenvalues) {
                prop_assert!((x - y).abs() <= 1e-10 * scale);
            }
        }
    }
}
