use alloc::format;

use crate::linear_solver::DenseMatrix;
use crate::mesh::{Face, StructuredMesh};
use crate::problem::{StabilizationSpec, WellSpec};
use crate::{Error, Result};

/// Jump of a cell field across a face: `χ_L − χ_K`, or `−χ_K` on the boundary.
pub fn pressure_jump(field: &[f64], face: &Face) -> f64 {
    match face.l {
        Some(l) => field[l] - field[face.k],
        None => -field[face.k],
    }
}

/// Fluid state of one cell (or of a boundary ghost) seen by a face flux.
/// Index 0 is the wetting phase, 1 the non-wetting phase.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellFluid {
    pub p: f64,
    /// Elevation of the centroid.
    pub z: f64,
    pub rho: [f64; 2],
    /// `dρ/dp`.
    pub drho: [f64; 2],
    pub mob: [f64; 2],
    /// `dλ/ds` with respect to the wetting saturation.
    pub dmob: [f64; 2],
}

/// Phase mass flux through a face and its derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseFlux {
    /// Mass flux from `K` towards `L` (kg/s).
    pub flux: f64,
    pub upwind_l: bool,
    pub d_pk: f64,
    pub d_pl: f64,
    pub d_sk: f64,
    pub d_sl: f64,
}

/// Two-point flux `F = −ρ^upw λ^upw Υ (⟦p⟧ + ρ^f g ⟦z⟧)` with upwinded density
/// and mobility and the arithmetic-mean face density in the gravity term.
///
/// The upwind cell is the one with the higher phase potential; ties go to `K`.
pub fn tpfa_phase_flux(trans: f64, k: &CellFluid, l: &CellFluid, phase: usize, gravity: f64) -> PhaseFlux {
    let dz = l.z - k.z;
    let rho_f = 0.5 * (k.rho[phase] + l.rho[phase]);
    let pot = l.p - k.p + rho_f * gravity * dz;
    let dpot_pk = -1.0 + 0.5 * gravity * dz * k.drho[phase];
    let dpot_pl = 1.0 + 0.5 * gravity * dz * l.drho[phase];
    let upwind_l = pot > 0.0;
    let up = if upwind_l { l } else { k };
    let coef = up.rho[phase] * up.mob[phase];
    let flux = -coef * trans * pot;
    let mut d_pk = -coef * trans * dpot_pk;
    let mut d_pl = -coef * trans * dpot_pl;
    let (mut d_sk, mut d_sl) = (0.0, 0.0);
    let dcoef_p = up.drho[phase] * up.mob[phase];
    let dcoef_s = up.rho[phase] * up.dmob[phase];
    if upwind_l {
        d_pl -= dcoef_p * trans * pot;
        d_sl = -dcoef_s * trans * pot;
    } else {
        d_pk -= dcoef_p * trans * pot;
        d_sk = -dcoef_s * trans * pot;
    }
    PhaseFlux {
        flux,
        upwind_l,
        d_pk,
        d_pl,
        d_sk,
        d_sl,
    }
}

/// Upwinded `ρ_w s` and `ρ_o (1 − s)` from the previous time level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaggedUpwind {
    pub rho_w: f64,
    /// Wetting saturation of the wetting-phase upwind cell.
    pub s_w: f64,
    pub rho_o: f64,
    /// Wetting saturation of the non-wetting-phase upwind cell.
    pub s_o: f64,
}

/// Coefficients `α_w = τ V [ρ_w s]^upw` and `α_o = τ V [ρ_o (1 − s)]^upw`.
pub fn stabilization_coefficients(tau: f64, volume: f64, lagged: &LaggedUpwind) -> (f64, f64) {
    (
        tau * volume * lagged.rho_w * lagged.s_w,
        tau * volume * lagged.rho_o * (1.0 - lagged.s_o),
    )
}

/// Stabilization fluxes `G_ℓ = −α_ℓ ⟦Δp⟧` on a macroelement-interior face.
pub fn stabilization_flux(
    face: &Face,
    dp_jump: f64,
    lagged: &LaggedUpwind,
    spec: &StabilizationSpec,
    volume: f64,
) -> Result<(f64, f64)> {
    if !face.macro_interior {
        return Err(Error::ContractViolation(format!(
            "stabilization flux requested on face between cells {} and {:?}, which is not \
             interior to a macroelement",
            face.k, face.l
        )));
    }
    let (aw, ao) = stabilization_coefficients(spec.effective_tau(), volume, lagged);
    Ok((-aw * dp_jump, -ao * dp_jump))
}

/// Dense stabilization block of one macroelement, `[C]_ij = −τ V Σ_f ⟦φ_i⟧⟦φ_j⟧`,
/// ordered as `mesh.macro_cells(m)`.
pub fn assemble_macro_c(mesh: &StructuredMesh, m: usize, tau: f64, volume: f64) -> DenseMatrix {
    let cells = mesh.macro_cells(m);
    let pos = |c: usize| cells.iter().position(|&x| x == c).expect("face cell in macroelement");
    let mut cm = DenseMatrix::zeros(cells.len(), cells.len());
    for &f in mesh.macro_interior_faces(m) {
        let face = mesh.face(f);
        let i = pos(face.k);
        let j = pos(face.l.expect("macro-interior faces are interior"));
        let a = tau * volume;
        cm[(i, i)] -= a;
        cm[(j, j)] -= a;
        cm[(i, j)] += a;
        cm[(j, i)] += a;
    }
    cm
}

/// Peaceman well index `2π κ h / (ln(0.2 Δh / r_w) + skin)`.
pub fn peaceman_index(perm: f64, dx: f64, height: f64, radius: f64, skin: f64) -> f64 {
    2.0 * core::f64::consts::PI * perm * height / (libm::log(0.2 * dx / radius) + skin)
}

/// Well mass rates into the cell and their derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WellRates {
    pub q: [f64; 2],
    pub dq_dp: [f64; 2],
    pub dq_ds: [f64; 2],
}

/// Peaceman well source `q_ℓ = ρ_ℓ λ_ℓ WI (p_bh − p)`.
///
/// An injecting well carries only the wetting phase at the mobility
/// `injection_mobility`; a producing well takes both phases at the cell mobilities.
pub fn well_source(
    well: &WellSpec,
    cell: &CellFluid,
    well_index: f64,
    injection_mobility: f64,
    initial_pressure: f64,
    t: f64,
) -> WellRates {
    let p_bh = initial_pressure + well.overpressure(t);
    let dp = p_bh - cell.p;
    let mut r = WellRates::default();
    if dp > 0.0 {
        let c = cell.rho[0] * injection_mobility * well_index;
        r.q[0] = c * dp;
        r.dq_dp[0] = cell.drho[0] * injection_mobility * well_index * dp - c;
    } else if dp < 0.0 {
        for ph in 0..2 {
            let c = cell.rho[ph] * cell.mob[ph] * well_index;
            r.q[ph] = c * dp;
            r.dq_dp[ph] = cell.drho[ph] * cell.mob[ph] * well_index * dp - c;
            r.dq_ds[ph] = cell.rho[ph] * cell.dmob[ph] * well_index * dp;
        }
    }
    r
}

/// A point source at `x0` acts wholly on its containing cell.
pub fn point_source(mesh: &StructuredMesh, x0: &[f64], rate: f64) -> Result<(usize, f64)> {
    Ok((mesh.locate_point(&x0[..mesh.dim()])?, rate))
}
