//! Residual and block Jacobian of the coupled displacement-saturation-pressure
//! system.
//!
//! Mass residuals follow the sign convention
//! `r_ℓ = −V Δm_ℓ + Δt Σ_f ⟦ψ⟧ F_ℓ + Δt ∫ψ q_ℓ`, so a flux `F` leaving cell `K`
//! towards `L` enters `K` with `−Δt F` and `L` with `+Δt F`. Stabilization
//! fluxes `G` are added to `Δt F` on macroelement-interior faces.

mod element;
mod flux;

pub use element::ElementKernel;
pub use flux::{
    assemble_macro_c, peaceman_index, point_source, pressure_jump, stabilization_coefficients, stabilization_flux,
    tpfa_phase_flux, well_source, CellFluid, LaggedUpwind, PhaseFlux, WellRates,
};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::constitutive::Phase;
use crate::linear_solver::{LinearOperator, SparseMatrix};
use crate::mesh::{transmissibilities, Face, StructuredMesh};
use crate::problem::{ProblemDefinition, SourceControl, TimeFunction};
use crate::{Error, Result};

/// Unknowns at one time level, plus the porosity history variable.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    /// Nodal displacements, `node · dim + component`.
    pub u: Vec<f64>,
    /// Wetting saturation per cell (identically 1 for single-phase flow).
    pub s: Vec<f64>,
    pub p: Vec<f64>,
    pub porosity: Vec<f64>,
    pub time: f64,
    pub step: usize,
}

impl SystemState {
    /// Zero displacement, uniform initial pressure and saturation.
    pub fn initial(problem: &ProblemDefinition) -> Self {
        let mesh = &problem.mesh;
        let s0 = if problem.is_two_phase() {
            problem.initial_saturation
        } else {
            1.0
        };
        SystemState {
            u: vec![0.0; mesh.num_nodes() * mesh.dim()],
            s: vec![s0; mesh.num_cells()],
            p: vec![problem.initial_pressure; mesh.num_cells()],
            porosity: problem.porosity.clone(),
            time: 0.0,
            step: 0,
        }
    }

    pub fn check(&self, mesh: &StructuredMesh) -> Result<()> {
        let nc = mesh.num_cells();
        let checks: [(&'static str, usize, usize); 4] = [
            ("displacement", mesh.num_nodes() * mesh.dim(), self.u.len()),
            ("saturation", nc, self.s.len()),
            ("pressure", nc, self.p.len()),
            ("porosity", nc, self.porosity.len()),
        ];
        for (what, expected, found) in checks {
            if expected != found {
                return Err(Error::SizeMismatch { what, expected, found });
            }
        }
        Ok(())
    }
}

/// Block of unknowns or equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    U,
    S,
    P,
}

/// Numbering of the unknowns of the Newton system `[u_free, s, p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    dim: usize,
    num_cells: usize,
    two_phase: bool,
    free_index: Vec<usize>,
    free_dofs: Vec<usize>,
}

impl DofMap {
    pub fn new(problem: &ProblemDefinition) -> Self {
        let mesh = &problem.mesh;
        let dim = mesh.dim();
        let nn = mesh.node_counts();
        let mut fixed = vec![false; mesh.num_nodes() * dim];
        for n in 0..mesh.num_nodes() {
            let ijk = mesh.node_ijk(n);
            for bc in &problem.boundary {
                let axis = bc.side.axis();
                let on_side = if bc.side.is_upper() {
                    ijk[axis] == nn[axis] - 1
                } else {
                    ijk[axis] == 0
                };
                if on_side {
                    for comp in 0..dim {
                        if bc.displacement.fixes(axis, comp) {
                            fixed[n * dim + comp] = true;
                        }
                    }
                }
            }
        }
        let mut free_index = vec![usize::MAX; fixed.len()];
        let mut free_dofs = Vec::new();
        for (d, &f) in fixed.iter().enumerate() {
            if !f {
                free_index[d] = free_dofs.len();
                free_dofs.push(d);
            }
        }
        DofMap {
            dim,
            num_cells: mesh.num_cells(),
            two_phase: problem.is_two_phase(),
            free_index,
            free_dofs,
        }
    }

    pub fn num_u(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn num_s(&self) -> usize {
        if self.two_phase {
            self.num_cells
        } else {
            0
        }
    }

    pub fn num_p(&self) -> usize {
        self.num_cells
    }

    pub fn len(&self) -> usize {
        self.num_u() + self.num_s() + self.num_p()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn offset(&self, f: Field) -> usize {
        match f {
            Field::U => 0,
            Field::S => self.num_u(),
            Field::P => self.num_u() + self.num_s(),
        }
    }

    /// Free index of nodal dof `node · dim + comp`, if not constrained.
    pub fn free(&self, nodal_dof: usize) -> Option<usize> {
        let i = self.free_index[nodal_dof];
        (i != usize::MAX).then_some(i)
    }

    /// Nodal dof of each free unknown.
    pub fn free_dofs(&self) -> &[usize] {
        &self.free_dofs
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn two_phase(&self) -> bool {
        self.two_phase
    }

    /// Equation block holding the mass balance of `phase`.
    pub fn equation_field(&self, phase: usize) -> Field {
        if phase == 0 && self.two_phase {
            Field::S
        } else {
            Field::P
        }
    }

    /// Phases carrying a mass balance.
    pub fn phases(&self) -> core::ops::Range<usize> {
        0..if self.two_phase { 2 } else { 1 }
    }
}

/// The 3×3 block Jacobian with the stabilization blocks kept separately.
///
/// `c_sp` and `c_pp` share the structure of `sp` and `pp`, so the stabilized
/// blocks `sp + c_sp` and `pp + c_pp` keep the two-point stencil. In
/// single-phase runs the saturation blocks are empty and the wetting-phase
/// stabilization lives in `c_pp`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockJacobian {
    pub uu: SparseMatrix,
    pub us: SparseMatrix,
    pub up: SparseMatrix,
    pub su: SparseMatrix,
    pub ss: SparseMatrix,
    pub sp: SparseMatrix,
    pub pu: SparseMatrix,
    pub ps: SparseMatrix,
    pub pp: SparseMatrix,
    pub c_sp: SparseMatrix,
    pub c_pp: SparseMatrix,
}

impl BlockJacobian {
    pub fn block(&self, r: Field, c: Field) -> &SparseMatrix {
        match (r, c) {
            (Field::U, Field::U) => &self.uu,
            (Field::U, Field::S) => &self.us,
            (Field::U, Field::P) => &self.up,
            (Field::S, Field::U) => &self.su,
            (Field::S, Field::S) => &self.ss,
            (Field::S, Field::P) => &self.sp,
            (Field::P, Field::U) => &self.pu,
            (Field::P, Field::S) => &self.ps,
            (Field::P, Field::P) => &self.pp,
        }
    }

    pub fn block_mut(&mut self, r: Field, c: Field) -> &mut SparseMatrix {
        match (r, c) {
            (Field::U, Field::U) => &mut self.uu,
            (Field::U, Field::S) => &mut self.us,
            (Field::U, Field::P) => &mut self.up,
            (Field::S, Field::U) => &mut self.su,
            (Field::S, Field::S) => &mut self.ss,
            (Field::S, Field::P) => &mut self.sp,
            (Field::P, Field::U) => &mut self.pu,
            (Field::P, Field::S) => &mut self.ps,
            (Field::P, Field::P) => &mut self.pp,
        }
    }

    /// Stabilization block for equation block `r` (`S` or `P`).
    pub fn c_block_mut(&mut self, r: Field) -> &mut SparseMatrix {
        match r {
            Field::S => &mut self.c_sp,
            _ => &mut self.c_pp,
        }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.uu.nrows(), self.ss.nrows(), self.pp.nrows())
    }

    fn set_zero(&mut self) {
        for m in [
            &mut self.uu,
            &mut self.us,
            &mut self.up,
            &mut self.su,
            &mut self.ss,
            &mut self.sp,
            &mut self.pu,
            &mut self.ps,
            &mut self.pp,
            &mut self.c_sp,
            &mut self.c_pp,
        ] {
            m.set_zero();
        }
    }

    /// `A_sp + C_sp`.
    pub fn stabilized_sp(&self) -> SparseMatrix {
        add_same_pattern(&self.sp, &self.c_sp)
    }

    /// `A_pp + C_pp`.
    pub fn stabilized_pp(&self) -> SparseMatrix {
        add_same_pattern(&self.pp, &self.c_pp)
    }

    /// The whole Jacobian as one matrix, unknowns ordered `[u, s, p]`.
    pub fn to_sparse(&self) -> SparseMatrix {
        let (nu, ns, np) = self.sizes();
        let off = [0, nu, nu + ns];
        let fields = [Field::U, Field::S, Field::P];
        let mut t = Vec::new();
        for (bi, &r) in fields.iter().enumerate() {
            for (bj, &c) in fields.iter().enumerate() {
                let mut blk = self.block(r, c).clone();
                if (r, c) == (Field::S, Field::P) {
                    blk = self.stabilized_sp();
                } else if (r, c) == (Field::P, Field::P) {
                    blk = self.stabilized_pp();
                }
                for i in 0..blk.nrows() {
                    let (cols, vals) = blk.row(i);
                    for (&j, &v) in cols.iter().zip(vals) {
                        t.push((off[bi] + i, off[bj] + j, v));
                    }
                }
            }
        }
        SparseMatrix::from_triplets(nu + ns + np, nu + ns + np, &t)
    }
}

fn add_same_pattern(a: &SparseMatrix, b: &SparseMatrix) -> SparseMatrix {
    debug_assert!(a.same_pattern(b));
    let mut out = a.clone();
    for i in 0..b.nrows() {
        let (_, bv) = b.row(i);
        let bv: Vec<f64> = bv.to_vec();
        let (_, ov) = out.row_mut(i);
        for (o, v) in ov.iter_mut().zip(bv) {
            *o += v;
        }
    }
    out
}

impl LinearOperator for BlockJacobian {
    fn dim(&self) -> usize {
        let (nu, ns, np) = self.sizes();
        nu + ns + np
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (nu, ns, _) = self.sizes();
        let (xu, rest) = x.split_at(nu);
        let (xs, xp) = rest.split_at(ns);
        let (yu, rest) = y.split_at_mut(nu);
        let (ys, yp) = rest.split_at_mut(ns);
        self.uu.matvec(xu, yu);
        self.us.matvec_add(1.0, xs, yu);
        self.up.matvec_add(1.0, xp, yu);
        self.su.matvec(xu, ys);
        self.ss.matvec_add(1.0, xs, ys);
        self.sp.matvec_add(1.0, xp, ys);
        self.c_sp.matvec_add(1.0, xp, ys);
        self.pu.matvec(xu, yp);
        self.ps.matvec_add(1.0, xs, yp);
        self.pp.matvec_add(1.0, xp, yp);
        self.c_pp.matvec_add(1.0, xp, yp);
    }
}

/// Residual split into its three blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    pub p: Vec<f64>,
}

impl Residual {
    pub fn block(&self, f: Field) -> &[f64] {
        match f {
            Field::U => &self.u,
            Field::S => &self.s,
            Field::P => &self.p,
        }
    }

    fn block_mut(&mut self, f: Field) -> &mut Vec<f64> {
        match f {
            Field::U => &mut self.u,
            Field::S => &mut self.s,
            Field::P => &mut self.p,
        }
    }

    pub fn stacked(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.u.len() + self.s.len() + self.p.len());
        v.extend_from_slice(&self.u);
        v.extend_from_slice(&self.s);
        v.extend_from_slice(&self.p);
        v
    }

    pub fn norms(&self) -> [f64; 3] {
        let n = |v: &[f64]| libm::sqrt(v.iter().map(|x| x * x).sum());
        [n(&self.u), n(&self.s), n(&self.p)]
    }
}

/// Cell quantities at the new time level.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct CellEval {
    phi: f64,
    dphi_dp: f64,
    fluid: CellFluid,
    /// Phase saturations `[s, 1 − s]`.
    sat: [f64; 2],
}

/// Everything that stays fixed over a run: dof numbering, element matrices,
/// transmissibilities, well indices and the matrix structure.
#[derive(Debug, Clone)]
pub struct Discretization<'a> {
    pub problem: &'a ProblemDefinition,
    pub dofs: DofMap,
    pub kernel: ElementKernel,
    pub transmissibility: Vec<f64>,
    pub well_index: Vec<f64>,
    point_sources: Vec<(usize, SourceControl)>,
    controlled: Vec<Option<TimeFunction>>,
    template: BlockJacobian,
    elastic: SparseMatrix,
}

impl<'a> Discretization<'a> {
    pub fn new(problem: &'a ProblemDefinition) -> Result<Self> {
        problem.validate()?;
        let mesh = &problem.mesh;
        let dofs = DofMap::new(problem);
        let kernel = ElementKernel::new(mesh.dim(), mesh.spacing(), problem.solid.lambda, problem.solid.shear);
        let transmissibility = transmissibilities(mesh, &problem.permeability);
        let h = mesh.spacing();
        let height = h[2];
        let mut well_index = Vec::with_capacity(problem.wells.len());
        for w in &problem.wells {
            // equivalent radius 0.2 Δx must exceed the effective well radius
            if !(libm::log(0.2 * h[0] / w.radius) + w.skin > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "well in cell {}: radius {} with skin {} is too large for cell width {}",
                    w.cell, w.radius, w.skin, h[0]
                )));
            }
            well_index.push(peaceman_index(
                problem.permeability[w.cell],
                h[0],
                height,
                w.radius,
                w.skin,
            ));
        }
        let mut point_sources = Vec::new();
        let mut controlled = vec![None; mesh.num_cells()];
        for src in &problem.sources {
            let (cell, _) = point_source(mesh, &src.location, 0.0)?;
            match src.control {
                SourceControl::Rate(_) => point_sources.push((cell, src.control)),
                SourceControl::Pressure(f) => controlled[cell] = Some(f),
            }
        }
        let template = build_template(mesh, &dofs);
        let mut d = Discretization {
            problem,
            dofs,
            kernel,
            transmissibility,
            well_index,
            point_sources,
            controlled,
            template,
            elastic: SparseMatrix::identity(0),
        };
        d.elastic = d.assemble_elastic();
        Ok(d)
    }

    pub fn mesh(&self) -> &StructuredMesh {
        &self.problem.mesh
    }

    /// Elastic stiffness on the free displacement dofs (constant over a run).
    pub fn elastic_stiffness(&self) -> &SparseMatrix {
        &self.elastic
    }

    /// Zero Jacobian carrying the full structure.
    pub fn jacobian_template(&self) -> &BlockJacobian {
        &self.template
    }

    pub fn is_pressure_controlled(&self, cell: usize) -> bool {
        self.controlled[cell].is_some()
    }

    /// Row scaling used for pressure-controlled cells.
    pub fn control_scale(&self) -> f64 {
        self.problem.wetting.reference_density * self.kernel.volume / self.problem.solid.constrained_modulus()
    }

    /// `(local element dof, free index)` pairs of cell `c`.
    fn element_free_dofs(&self, c: usize) -> Vec<(usize, usize)> {
        let dim = self.dofs.dim();
        let mut out = Vec::with_capacity(self.kernel.dofs());
        for (a, &n) in self.mesh().cell_nodes(c).iter().enumerate() {
            for i in 0..dim {
                if let Some(f) = self.dofs.free(n * dim + i) {
                    out.push((a * dim + i, f));
                }
            }
        }
        out
    }

    fn assemble_elastic(&self) -> SparseMatrix {
        let mut k = self.template.uu.clone();
        for c in 0..self.mesh().num_cells() {
            let ed = self.element_free_dofs(c);
            for &(a, fa) in &ed {
                for &(b, fb) in &ed {
                    k.add(fa, fb, self.kernel.k(a, b))
                        .expect("element dofs are in the structure");
                }
            }
        }
        k
    }

    /// Biot coupling block `[A_up]_ic = −b ∫_c ∇·η_i` on the free dofs.
    pub fn coupling_matrix(&self) -> SparseMatrix {
        let mut up = self.template.up.clone();
        let b = self.problem.solid.biot;
        for c in 0..self.mesh().num_cells() {
            for (a, fa) in self.element_free_dofs(c) {
                up.add(fa, c, -b * self.kernel.divergence[a])
                    .expect("coupling entries are in the structure");
            }
        }
        up
    }

    /// Cell-average volumetric strain `(1/V) ∫ ∇·u`.
    pub fn volumetric_strain(&self, u: &[f64], c: usize) -> f64 {
        let dim = self.dofs.dim();
        let mut s = 0.0;
        for (a, &n) in self.mesh().cell_nodes(c).iter().enumerate() {
            for i in 0..dim {
                s += self.kernel.divergence[a * dim + i] * u[n * dim + i];
            }
        }
        s / self.kernel.volume
    }

    /// Porosity of `state` given the previous converged level.
    pub fn porosity(&self, state: &SystemState, prev: &SystemState) -> Vec<f64> {
        (0..self.mesh().num_cells())
            .map(|c| self.porosity_of(state, prev, c))
            .collect()
    }

    fn porosity_of(&self, state: &SystemState, prev: &SystemState, c: usize) -> f64 {
        let solid = &self.problem.solid;
        let de = self.volumetric_strain(&state.u, c) - self.volumetric_strain(&prev.u, c);
        let cp = solid.porosity_pressure_coefficient(self.problem.porosity[c]);
        prev.porosity[c] + solid.biot * de + cp * (state.p[c] - prev.p[c])
    }

    fn elevation(&self, c: usize) -> f64 {
        self.mesh().cell_centroid(c)[self.mesh().dim() - 1]
    }

    fn fluid_at(&self, p: f64, s: f64, z: f64) -> CellFluid {
        let pr = self.problem;
        let mut f = CellFluid {
            p,
            z,
            rho: [pr.wetting.density(p), pr.nonwetting.density(p)],
            drho: [pr.wetting.density_derivative(), pr.nonwetting.density_derivative()],
            ..Default::default()
        };
        if self.dofs.two_phase() {
            let (kw, dkw) = pr.relperm.relperm(Phase::Wetting, s);
            let (ko, dko) = pr.relperm.relperm(Phase::NonWetting, s);
            f.mob = [kw / pr.wetting.viscosity, ko / pr.nonwetting.viscosity];
            f.dmob = [dkw / pr.wetting.viscosity, dko / pr.nonwetting.viscosity];
        } else {
            f.mob = [1.0 / pr.wetting.viscosity, 0.0];
        }
        f
    }

    fn cell_eval(&self, state: &SystemState, prev: &SystemState) -> Vec<CellEval> {
        let solid = &self.problem.solid;
        (0..self.mesh().num_cells())
            .map(|c| CellEval {
                phi: self.porosity_of(state, prev, c),
                dphi_dp: solid.porosity_pressure_coefficient(self.problem.porosity[c]),
                fluid: self.fluid_at(state.p[c], state.s[c], self.elevation(c)),
                sat: [state.s[c], 1.0 - state.s[c]],
            })
            .collect()
    }

    /// Boundary ghost state for a face on a pressure boundary.
    fn ghost(&self, face: &Face) -> Option<CellFluid> {
        let side = face.boundary?;
        let bc = self.problem.side_condition(side);
        let p = bc.pressure?;
        let dim = self.mesh().dim();
        let mut z = self.elevation(face.k);
        if face.axis == dim - 1 {
            z += 0.5 * self.mesh().spacing()[face.axis] * face.normal[face.axis];
        }
        let s = if self.dofs.two_phase() { bc.saturation } else { 1.0 };
        Some(self.fluid_at(p, s, z))
    }

    /// Lagged stabilization coefficients `(α_w, α_o)` per face (zero off the
    /// macroelement interiors or when stabilization is off).
    pub fn stabilization_alphas(&self, prev: &SystemState) -> Vec<(f64, f64)> {
        let tau = self.problem.stabilization.effective_tau();
        let mesh = self.mesh();
        let mut out = vec![(0.0, 0.0); mesh.faces().len()];
        if tau == 0.0 {
            return out;
        }
        let g = self.problem.gravity;
        for (fi, face) in mesh.faces().iter().enumerate() {
            if !face.macro_interior {
                continue;
            }
            let l = face.l.expect("macro-interior faces are interior");
            let fk = self.fluid_at(prev.p[face.k], prev.s[face.k], self.elevation(face.k));
            let fl = self.fluid_at(prev.p[l], prev.s[l], self.elevation(l));
            let up_w = tpfa_phase_flux(1.0, &fk, &fl, 0, g).upwind_l;
            let up_o = tpfa_phase_flux(1.0, &fk, &fl, 1, g).upwind_l;
            let (cw, fw) = if up_w { (l, &fl) } else { (face.k, &fk) };
            let (co, fo) = if up_o { (l, &fl) } else { (face.k, &fk) };
            let lag = LaggedUpwind {
                rho_w: fw.rho[0],
                s_w: prev.s[cw],
                rho_o: fo.rho[1],
                s_o: prev.s[co],
            };
            out[fi] = stabilization_coefficients(tau, self.kernel.volume, &lag);
        }
        out
    }

    /// Per-cell stabilization contributions `[w, o]` to the mass residuals.
    pub fn stabilization_contributions(&self, state: &SystemState, prev: &SystemState) -> Vec<[f64; 2]> {
        let alphas = self.stabilization_alphas(prev);
        let mesh = self.mesh();
        let mut out = vec![[0.0; 2]; mesh.num_cells()];
        for (fi, face) in mesh.faces().iter().enumerate() {
            if !face.macro_interior {
                continue;
            }
            let l = face.l.unwrap();
            let jump = (state.p[l] - prev.p[l]) - (state.p[face.k] - prev.p[face.k]);
            let (aw, ao) = alphas[fi];
            for (ph, a) in [aw, ao].into_iter().enumerate() {
                let g = -a * jump;
                out[face.k][ph] -= g;
                out[l][ph] += g;
            }
        }
        out
    }

    /// Largest net stabilization contribution over any macroelement and phase,
    /// relative to the largest single-cell contribution.
    pub fn macro_stabilization_imbalance(&self, state: &SystemState, prev: &SystemState) -> f64 {
        let contrib = self.stabilization_contributions(state, prev);
        let scale = contrib
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mesh = self.mesh();
        let mut worst = 0.0f64;
        for m in 0..mesh.num_macroelements() {
            for ph in 0..2 {
                let net: f64 = mesh.macro_cells(m).iter().map(|&c| contrib[c][ph]).sum();
                worst = worst.max(net.abs());
            }
        }
        worst / scale
    }

    /// Discrete residual at `state` for the step from `prev` of length `dt`.
    pub fn assemble_residual(&self, state: &SystemState, prev: &SystemState, dt: f64) -> Result<Residual> {
        state.check(self.mesh())?;
        prev.check(self.mesh())?;
        let mesh = self.mesh();
        let pr = self.problem;
        let dim = mesh.dim();
        let nc = mesh.num_cells();
        let t = prev.time + dt;
        let cells = self.cell_eval(state, prev);
        let prev_cells = self.cell_eval(prev, prev);
        let mut r = Residual {
            u: vec![0.0; self.dofs.num_u()],
            s: vec![0.0; self.dofs.num_s()],
            p: vec![0.0; nc],
        };
        let b = pr.solid.biot;
        let g = pr.gravity;
        // Momentum.
        for c in 0..nc {
            let nodes = mesh.cell_nodes(c);
            let ce = &cells[c];
            let rho_mix = (1.0 - ce.phi) * pr.solid.grain_density
                + ce.phi * (ce.fluid.rho[0] * ce.sat[0] + ce.fluid.rho[1] * ce.sat[1]);
            for (a, fa) in self.element_free_dofs(c) {
                let mut v = 0.0;
                for (bn, &n) in nodes.iter().enumerate() {
                    for j in 0..dim {
                        v += self.kernel.k(a, bn * dim + j) * state.u[n * dim + j];
                    }
                }
                v -= b * state.p[c] * self.kernel.divergence[a];
                if g != 0.0 && a % dim == dim - 1 {
                    v += g * rho_mix * self.kernel.lumped[a / dim];
                }
                r.u[fa] += v;
            }
        }
        // Accumulation.
        let vol = self.kernel.volume;
        for c in 0..nc {
            let (ce, pe) = (&cells[c], &prev_cells[c]);
            for ph in self.dofs.phases() {
                let m_new = ce.phi * ce.fluid.rho[ph] * ce.sat[ph];
                let m_old = prev.porosity[c] * pe.fluid.rho[ph] * pe.sat[ph];
                let f = self.dofs.equation_field(ph);
                r.block_mut(f)[c] -= vol * (m_new - m_old);
            }
        }
        // Two-point fluxes.
        for (fi, face) in mesh.faces().iter().enumerate() {
            let tr = self.transmissibility[fi];
            let (l_fluid, l) = match face.l {
                Some(l) => (cells[l].fluid, Some(l)),
                None => match self.ghost(face) {
                    Some(gf) => (gf, None),
                    None => continue,
                },
            };
            for ph in self.dofs.phases() {
                let fl = tpfa_phase_flux(tr, &cells[face.k].fluid, &l_fluid, ph, g);
                let f = self.dofs.equation_field(ph);
                r.block_mut(f)[face.k] -= dt * fl.flux;
                if let Some(l) = l {
                    r.block_mut(f)[l] += dt * fl.flux;
                }
            }
        }
        // Stabilization.
        if pr.stabilization.effective_tau() > 0.0 {
            let contrib = self.stabilization_contributions(state, prev);
            for c in 0..nc {
                for ph in self.dofs.phases() {
                    let f = self.dofs.equation_field(ph);
                    r.block_mut(f)[c] += contrib[c][ph];
                }
            }
        }
        // Sources and wells.
        for &(c, ctrl) in &self.point_sources {
            if let SourceControl::Rate(q) = ctrl {
                let f = self.dofs.equation_field(0);
                r.block_mut(f)[c] += dt * cells[c].fluid.rho[0] * q.eval(t);
            }
        }
        let inj_mob = self.injection_mobility();
        for (w, &wi) in pr.wells.iter().zip(&self.well_index) {
            let rates = well_source(w, &cells[w.cell].fluid, wi, inj_mob, pr.initial_pressure, t);
            for ph in self.dofs.phases() {
                let f = self.dofs.equation_field(ph);
                r.block_mut(f)[w.cell] += dt * rates.q[ph];
            }
        }
        // Pressure-controlled cells replace their pressure-row equation.
        let scale = self.control_scale();
        for (c, ctrl) in self.controlled.iter().enumerate() {
            if let Some(fun) = ctrl {
                r.p[c] = scale * (state.p[c] - fun.eval(t));
            }
        }
        Ok(r)
    }

    fn injection_mobility(&self) -> f64 {
        let pr = self.problem;
        if self.dofs.two_phase() {
            pr.relperm.relperm(Phase::Wetting, 1.0).0 / pr.wetting.viscosity
        } else {
            1.0 / pr.wetting.viscosity
        }
    }

    /// Analytic Jacobian of [`Self::assemble_residual`], with the
    /// stabilization coefficients lagged at `prev`.
    pub fn assemble_jacobian(&self, state: &SystemState, prev: &SystemState, dt: f64) -> Result<BlockJacobian> {
        state.check(self.mesh())?;
        prev.check(self.mesh())?;
        let mesh = self.mesh();
        let pr = self.problem;
        let dim = mesh.dim();
        let nc = mesh.num_cells();
        let t = prev.time + dt;
        let two = self.dofs.two_phase();
        let cells = self.cell_eval(state, prev);
        let mut jac = self.template.clone();
        jac.set_zero();
        let b = pr.solid.biot;
        let g = pr.gravity;
        let vol = self.kernel.volume;
        // Momentum rows.
        for c in 0..nc {
            let ed = self.element_free_dofs(c);
            let ce = &cells[c];
            for &(a, fa) in &ed {
                for &(bl, fb) in &ed {
                    jac.uu.add(fa, fb, self.kernel.k(a, bl))?;
                }
                jac.up.add(fa, c, -b * self.kernel.divergence[a])?;
            }
            if g != 0.0 {
                let drho_dphi = -pr.solid.grain_density + ce.fluid.rho[0] * ce.sat[0] + ce.fluid.rho[1] * ce.sat[1];
                let drho_dp =
                    ce.dphi_dp * drho_dphi + ce.phi * (ce.fluid.drho[0] * ce.sat[0] + ce.fluid.drho[1] * ce.sat[1]);
                let drho_ds = ce.phi * (ce.fluid.rho[0] - ce.fluid.rho[1]);
                for &(a, fa) in &ed {
                    if a % dim != dim - 1 {
                        continue;
                    }
                    let w = g * self.kernel.lumped[a / dim];
                    jac.up.add(fa, c, w * drho_dp)?;
                    if two {
                        jac.us.add(fa, c, w * drho_ds)?;
                    }
                    for &(bl, fb) in &ed {
                        jac.uu
                            .add(fa, fb, w * drho_dphi * b * self.kernel.divergence[bl] / vol)?;
                    }
                }
            }
        }
        // Accumulation.
        for c in 0..nc {
            let ce = &cells[c];
            let ed = self.element_free_dofs(c);
            for ph in self.dofs.phases() {
                let f = self.dofs.equation_field(ph);
                let (rho, sat) = (ce.fluid.rho[ph], ce.sat[ph]);
                for &(a, fa) in &ed {
                    jac.block_mut(f, Field::U)
                        .add(c, fa, -rho * sat * b * self.kernel.divergence[a])?;
                }
                jac.block_mut(f, Field::P)
                    .add(c, c, -vol * sat * (ce.dphi_dp * rho + ce.phi * ce.fluid.drho[ph]))?;
                if two {
                    let dsat = if ph == 0 { 1.0 } else { -1.0 };
                    jac.block_mut(f, Field::S).add(c, c, -vol * ce.phi * rho * dsat)?;
                }
            }
        }
        // Two-point fluxes.
        for (fi, face) in mesh.faces().iter().enumerate() {
            let tr = self.transmissibility[fi];
            let k = face.k;
            let (l_fluid, l) = match face.l {
                Some(l) => (cells[l].fluid, Some(l)),
                None => match self.ghost(face) {
                    Some(gf) => (gf, None),
                    None => continue,
                },
            };
            for ph in self.dofs.phases() {
                let fl = tpfa_phase_flux(tr, &cells[k].fluid, &l_fluid, ph, g);
                let f = self.dofs.equation_field(ph);
                jac.block_mut(f, Field::P).add(k, k, -dt * fl.d_pk)?;
                if two {
                    jac.block_mut(f, Field::S).add(k, k, -dt * fl.d_sk)?;
                }
                if let Some(l) = l {
                    jac.block_mut(f, Field::P).add(k, l, -dt * fl.d_pl)?;
                    jac.block_mut(f, Field::P).add(l, k, dt * fl.d_pk)?;
                    jac.block_mut(f, Field::P).add(l, l, dt * fl.d_pl)?;
                    if two {
                        jac.block_mut(f, Field::S).add(k, l, -dt * fl.d_sl)?;
                        jac.block_mut(f, Field::S).add(l, k, dt * fl.d_sk)?;
                        jac.block_mut(f, Field::S).add(l, l, dt * fl.d_sl)?;
                    }
                }
            }
        }
        // Stabilization: [C]_ij = −α ⟦φ_i⟧⟦φ_j⟧.
        if pr.stabilization.effective_tau() > 0.0 {
            let alphas = self.stabilization_alphas(prev);
            for (fi, face) in mesh.faces().iter().enumerate() {
                if !face.macro_interior {
                    continue;
                }
                let (k, l) = (face.k, face.l.unwrap());
                let (aw, ao) = alphas[fi];
                for ph in self.dofs.phases() {
                    let a = if ph == 0 { aw } else { ao };
                    let cb = jac.c_block_mut(self.dofs.equation_field(ph));
                    cb.add(k, k, -a)?;
                    cb.add(l, l, -a)?;
                    cb.add(k, l, a)?;
                    cb.add(l, k, a)?;
                }
            }
        }
        // Sources and wells.
        for &(c, ctrl) in &self.point_sources {
            if let SourceControl::Rate(q) = ctrl {
                let f = self.dofs.equation_field(0);
                jac.block_mut(f, Field::P)
                    .add(c, c, dt * cells[c].fluid.drho[0] * q.eval(t))?;
            }
        }
        let inj_mob = self.injection_mobility();
        for (w, &wi) in pr.wells.iter().zip(&self.well_index) {
            let c = w.cell;
            let rates = well_source(w, &cells[c].fluid, wi, inj_mob, pr.initial_pressure, t);
            for ph in self.dofs.phases() {
                let f = self.dofs.equation_field(ph);
                jac.block_mut(f, Field::P).add(c, c, dt * rates.dq_dp[ph])?;
                if two {
                    jac.block_mut(f, Field::S).add(c, c, dt * rates.dq_ds[ph])?;
                }
            }
        }
        let scale = self.control_scale();
        for (c, ctrl) in self.controlled.iter().enumerate() {
            if ctrl.is_some() {
                jac.pu.zero_row(c);
                jac.ps.zero_row(c);
                jac.pp.zero_row(c);
                jac.c_pp.zero_row(c);
                jac.pp.add(c, c, scale)?;
            }
        }
        Ok(jac)
    }

    /// Adds a stacked Newton update `[δu, δs, δp]` to `state`.
    pub fn apply_update(&self, state: &mut SystemState, dx: &[f64]) {
        let (nu, ns) = (self.dofs.num_u(), self.dofs.num_s());
        for (i, &d) in self.dofs.free_dofs().iter().enumerate() {
            state.u[d] += dx[i];
        }
        if ns > 0 {
            for c in 0..ns {
                state.s[c] += dx[nu + c];
            }
        }
        let off = nu + ns;
        for c in 0..self.dofs.num_p() {
            state.p[c] += dx[off + c];
        }
    }
}

fn build_template(mesh: &StructuredMesh, dofs: &DofMap) -> BlockJacobian {
    let nc = mesh.num_cells();
    let dim = mesh.dim();
    let (nu, ns, np) = (dofs.num_u(), dofs.num_s(), dofs.num_p());
    let mut uu_rows = vec![Vec::new(); nu];
    let mut up_rows = vec![Vec::new(); nu];
    let mut pu_rows = vec![Vec::new(); nc];
    for c in 0..nc {
        let mut ed = Vec::new();
        for &n in mesh.cell_nodes(c) {
            for i in 0..dim {
                if let Some(f) = dofs.free(n * dim + i) {
                    ed.push(f);
                }
            }
        }
        for &a in &ed {
            uu_rows[a].extend_from_slice(&ed);
            up_rows[a].push(c);
        }
        pu_rows[c] = ed;
    }
    let mut tpfa_rows: Vec<Vec<usize>> = (0..nc).map(|c| vec![c]).collect();
    for f in mesh.faces() {
        if let Some(l) = f.l {
            tpfa_rows[f.k].push(l);
            tpfa_rows[l].push(f.k);
        }
    }
    let empty = |r: usize, c: usize| SparseMatrix::from_pattern(r, c, vec![Vec::new(); r]);
    let flow = |rows: usize, cols: usize| {
        if rows == 0 || cols == 0 {
            empty(rows, cols)
        } else {
            SparseMatrix::from_pattern(rows, cols, tpfa_rows.clone())
        }
    };
    let up = SparseMatrix::from_pattern(nu, np, up_rows.clone());
    let pu = SparseMatrix::from_pattern(np, nu, pu_rows.clone());
    let (us, su) = if ns > 0 {
        (
            SparseMatrix::from_pattern(nu, ns, up_rows),
            SparseMatrix::from_pattern(ns, nu, pu_rows),
        )
    } else {
        (empty(nu, 0), empty(0, nu))
    };
    BlockJacobian {
        uu: SparseMatrix::from_pattern(nu, nu, uu_rows),
        us,
        up,
        su,
        ss: flow(ns, ns),
        sp: flow(ns, np),
        pu,
        ps: flow(np, ns),
        pp: flow(np, np),
        c_sp: flow(ns, np),
        c_pp: flow(np, np),
    }
}
