//! Backward-Euler time marching with a Newton-Krylov solve per step.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::assembly::{BlockJacobian, Discretization, Field, Residual, SystemState};
use crate::benchmarks::oscillation_metric;
use crate::linear_solver::{
    gmres_solve, BandedCholesky, BlockPreconditioner, FlowBlockApproximation, GmresOptions, SparseMatrix,
};
use crate::problem::ProblemDefinition;
use crate::{Error, Result};

/// Step-size control: start at `initial_dt`, multiply by `growth` after every
/// accepted step up to `max_dt`, and clip the last step to end on `end_time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSchedule {
    pub initial_dt: f64,
    pub max_dt: f64,
    pub growth: f64,
    pub end_time: f64,
}

impl TimeSchedule {
    pub fn uniform(dt: f64, end_time: f64) -> Self {
        TimeSchedule {
            initial_dt: dt,
            max_dt: dt,
            growth: 1.0,
            end_time,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_dt > 0.0 && self.initial_dt <= self.max_dt) {
            return Err(Error::InvalidInput(format!(
                "time steps must satisfy 0 < initial ({}) <= maximum ({})",
                self.initial_dt, self.max_dt
            )));
        }
        if !(self.end_time > 0.0) {
            return Err(Error::InvalidInput(format!(
                "end time must be positive, got {}",
                self.end_time
            )));
        }
        if !(self.growth >= 1.0) {
            return Err(Error::InvalidInput(format!(
                "step growth factor must be >= 1, got {}",
                self.growth
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Newton tolerance on the block-scaled residual.
    pub newton_tolerance: f64,
    pub max_newton_iterations: usize,
    pub max_step_retries: usize,
    pub gmres: GmresOptions,
    pub flow_block: FlowBlockApproximation,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            newton_tolerance: 1e-6,
            max_newton_iterations: 25,
            max_step_retries: 10,
            gmres: GmresOptions {
                tolerance: 1e-10,
                restart: 200,
                max_iterations: 2000,
            },
            flow_block: FlowBlockApproximation::FixedStress,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub state: SystemState,
    pub iterations: usize,
    /// GMRES iterations of each Newton iteration.
    pub krylov_iterations: Vec<usize>,
    /// Scaled residual after each iteration, starting with the initial one (= 1).
    pub residual_history: Vec<f64>,
    /// Saturation values clipped back into `[0, 1]`.
    pub clipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub dt: f64,
    pub retries: usize,
    pub newton_iterations: usize,
    pub krylov_iterations: Vec<usize>,
    pub clipped: usize,
    pub oscillation: f64,
    /// Largest net stabilization contribution of a macroelement, relative to
    /// the largest cell contribution.
    pub macro_imbalance: f64,
}

impl StepDiagnostics {
    pub fn total_krylov(&self) -> usize {
        self.krylov_iterations.iter().sum()
    }

    pub fn mean_krylov(&self) -> f64 {
        if self.krylov_iterations.is_empty() {
            0.0
        } else {
            self.total_krylov() as f64 / self.krylov_iterations.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarchOutcome {
    pub final_state: SystemState,
    pub steps: Vec<StepDiagnostics>,
    /// Set when the march stopped before the end time.
    pub failure: Option<Error>,
}

impl MarchOutcome {
    pub fn into_result(self) -> Result<(SystemState, Vec<StepDiagnostics>)> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok((self.final_state, self.steps)),
        }
    }
}

/// Discretization plus the factored elastic block, reused across steps.
pub struct Simulator<'a> {
    pub disc: Discretization<'a>,
    pub options: SolverOptions,
    elastic: BandedCholesky,
    coupling: SparseMatrix,
    excluded_cells: Vec<usize>,
}

impl<'a> Simulator<'a> {
    pub fn new(problem: &'a ProblemDefinition, options: SolverOptions) -> Result<Self> {
        let disc = Discretization::new(problem)?;
        let elastic = BandedCholesky::factor(disc.elastic_stiffness())?;
        let mut excluded_cells = problem.pressure_controlled_cells();
        let d = problem.mesh.dim();
        for s in &problem.sources {
            if let Ok(c) = problem.mesh.locate_point(&s.location[..d]) {
                excluded_cells.push(c);
            }
        }
        excluded_cells.extend(problem.wells.iter().map(|w| w.cell));
        excluded_cells.sort_unstable();
        excluded_cells.dedup();
        let coupling = disc.coupling_matrix();
        Ok(Simulator {
            disc,
            options,
            elastic,
            coupling,
            excluded_cells,
        })
    }

    pub fn problem(&self) -> &'a ProblemDefinition {
        self.disc.problem
    }

    /// Source and well cells, left out of the oscillation metric.
    pub fn excluded_cells(&self) -> &[usize] {
        &self.excluded_cells
    }

    /// Flow-block approximation `Ŝ_f` in stacked `[s, p]` order.
    pub fn flow_block(&self, jac: &BlockJacobian, state: &SystemState) -> SparseMatrix {
        let (_, ns, np) = jac.sizes();
        let n = ns + np;
        let mut t = Vec::new();
        let blocks: [(usize, usize, SparseMatrix); 4] = [
            (0, 0, jac.ss.clone()),
            (0, ns, jac.stabilized_sp()),
            (ns, 0, jac.ps.clone()),
            (ns, ns, jac.stabilized_pp()),
        ];
        for (ro, co, b) in &blocks {
            for i in 0..b.nrows() {
                let (cols, vals) = b.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    t.push((ro + i, co + j, v));
                }
            }
        }
        if self.options.flow_block == FlowBlockApproximation::FixedStress {
            let pr = self.problem();
            let solid = &pr.solid;
            let k = solid.biot * solid.biot * self.disc.kernel.volume / solid.constrained_modulus();
            let dofs = &self.disc.dofs;
            for c in 0..np {
                let p = state.p[c];
                let s = state.s[c];
                let dens = [pr.wetting.density(p) * s, pr.nonwetting.density(p) * (1.0 - s)];
                for ph in dofs.phases() {
                    let field = dofs.equation_field(ph);
                    if field == Field::P && self.disc.is_pressure_controlled(c) {
                        continue;
                    }
                    let row = if field == Field::S { c } else { ns + c };
                    t.push((row, ns + c, -k * dens[ph]));
                }
            }
        }
        SparseMatrix::from_triplets(n, n, &t)
    }

    fn scaled_norm(r: &Residual, refs: &[f64; 3]) -> f64 {
        let n = r.norms();
        (0..3).map(|b| n[b] / refs[b]).fold(0.0, f64::max)
    }

    /// `‖K u‖ + ‖A_up p‖` on the free displacement dofs: the size of the
    /// internal forces, below which the momentum residual is round-off.
    fn force_scale(&self, state: &SystemState) -> f64 {
        let u: Vec<f64> = self.disc.dofs.free_dofs().iter().map(|&d| state.u[d]).collect();
        let mut f = vec![0.0; u.len()];
        self.disc.elastic_stiffness().matvec(&u, &mut f);
        let ku = libm::sqrt(f.iter().map(|v| v * v).sum());
        f.iter_mut().for_each(|v| *v = 0.0);
        self.coupling.matvec(&state.p, &mut f);
        ku + libm::sqrt(f.iter().map(|v| v * v).sum())
    }

    /// Norms of the phase masses in place `V ρ_ℓ φ s_ℓ`, ordered like the
    /// `[S, P]` equation blocks.
    fn mass_scales(&self, state: &SystemState) -> [f64; 2] {
        let pr = self.problem();
        let v = self.disc.kernel.volume;
        let dofs = &self.disc.dofs;
        let mut out = [0.0; 2];
        for ph in dofs.phases() {
            let sq: f64 = (0..state.p.len())
                .map(|c| {
                    let m = if ph == 0 {
                        pr.wetting.density(state.p[c]) * state.s[c]
                    } else {
                        pr.nonwetting.density(state.p[c]) * (1.0 - state.s[c])
                    };
                    let m = v * state.porosity[c] * m;
                    m * m
                })
                .sum();
            let slot = if dofs.equation_field(ph) == Field::S { 0 } else { 1 };
            out[slot] = libm::sqrt(sq);
        }
        out
    }

    /// GMRES iterations needed for the first Newton correction of a step.
    pub fn krylov_iterations_at(&self, prev: &SystemState, dt: f64) -> Result<usize> {
        let mut state = prev.clone();
        state.time = prev.time + dt;
        let r = self.disc.assemble_residual(&state, prev, dt)?;
        let jac = self.disc.assemble_jacobian(&state, prev, dt)?;
        let flow = self.flow_block(&jac, &state);
        let pc = BlockPreconditioner::new(&self.elastic, &jac.us, &jac.up, &flow)?;
        let rhs: Vec<f64> = r.stacked().iter().map(|v| -v).collect();
        Ok(gmres_solve(&jac, &rhs, &pc, &self.options.gmres)?.iterations)
    }

    /// One backward-Euler step of length `dt` from `prev`.
    ///
    /// Convergence is measured block by block against the initial residual
    /// norms, each floored at `1e-3` times the initial stacked norm. The
    /// momentum reference is also floored at `1e-6` times the internal force
    /// scale, and the mass references at `1e-6` times the mass in place, so
    /// that a step starting next to round-off cannot stall the iteration.
    pub fn newton_solve(&self, prev: &SystemState, dt: f64) -> Result<NewtonOutcome> {
        let disc = &self.disc;
        let opts = &self.options;
        let mut state = prev.clone();
        state.time = prev.time + dt;
        state.step = prev.step + 1;
        let mut r = disc.assemble_residual(&state, prev, dt)?;
        let n0 = r.norms();
        let total0 = libm::sqrt(n0.iter().map(|v| v * v).sum());
        let mut out = NewtonOutcome {
            state,
            iterations: 0,
            krylov_iterations: Vec::new(),
            residual_history: vec![if total0 > 0.0 { 1.0 } else { 0.0 }],
            clipped: 0,
        };
        if total0 == 0.0 {
            out.state.porosity = disc.porosity(&out.state, prev);
            return Ok(out);
        }
        let mut refs = n0.map(|n| n.max(1e-3 * total0));
        refs[0] = refs[0].max(1e-6 * self.force_scale(prev));
        let mass = self.mass_scales(prev);
        refs[1] = refs[1].max(1e-6 * mass[0]);
        refs[2] = refs[2].max(1e-6 * mass[1]);
        let two_phase = disc.dofs.two_phase();
        for _ in 0..opts.max_newton_iterations {
            let jac = disc.assemble_jacobian(&out.state, prev, dt)?;
            let flow = self.flow_block(&jac, &out.state);
            let pc = BlockPreconditioner::new(&self.elastic, &jac.us, &jac.up, &flow)?;
            let rhs: Vec<f64> = r.stacked().iter().map(|v| -v).collect();
            let sol = gmres_solve(&jac, &rhs, &pc, &opts.gmres)?;
            out.krylov_iterations.push(sol.iterations);
            disc.apply_update(&mut out.state, &sol.solution);
            if two_phase {
                for s in out.state.s.iter_mut() {
                    if *s < 0.0 || *s > 1.0 {
                        *s = s.clamp(0.0, 1.0);
                        out.clipped += 1;
                    }
                }
            }
            out.iterations += 1;
            r = disc.assemble_residual(&out.state, prev, dt)?;
            let scaled = Self::scaled_norm(&r, &refs);
            out.residual_history.push(scaled);
            if !scaled.is_finite() {
                break;
            }
            if scaled <= opts.newton_tolerance {
                if out.clipped > 0 {
                    log::debug!("step {}: clipped {} saturation values", out.state.step, out.clipped);
                }
                out.state.porosity = disc.porosity(&out.state, prev);
                return Ok(out);
            }
        }
        Err(Error::StepRejected {
            step: out.state.step,
            time: out.state.time,
            retries: 0,
            reason: format!(
                "Newton did not converge in {} iterations (scaled residual {:.3e})",
                out.iterations,
                out.residual_history.last().copied().unwrap_or(f64::NAN)
            ),
        })
    }

    /// Marches from `initial` to the schedule end time. `observer` sees every
    /// accepted state.
    pub fn time_march(
        &self,
        initial: &SystemState,
        mut observer: impl FnMut(&SystemState, &StepDiagnostics),
    ) -> MarchOutcome {
        let sched = self.problem().schedule;
        let end = sched.end_time;
        let mut state = initial.clone();
        let mut steps = Vec::new();
        let mut dt = sched.initial_dt;
        while state.time < end * (1.0 - 1e-12) {
            let remaining = end - state.time;
            let mut step_dt = if dt >= remaining * (1.0 - 1e-9) { remaining } else { dt };
            let mut retries = 0;
            let outcome = loop {
                match self.newton_solve(&state, step_dt) {
                    Ok(o) => break Ok(o),
                    Err(e) if retries < self.options.max_step_retries => {
                        log::warn!("step at t = {:.6e} with dt = {:.3e} rejected: {e}", state.time, step_dt);
                        retries += 1;
                        step_dt *= 0.5;
                    }
                    Err(e) => {
                        let reason = match e {
                            Error::StepRejected { reason, .. } => reason,
                            other => format!("{other}"),
                        };
                        break Err(Error::StepRejected {
                            step: state.step + 1,
                            time: state.time,
                            retries,
                            reason,
                        });
                    }
                }
            };
            let o = match outcome {
                Ok(o) => o,
                Err(e) => {
                    return MarchOutcome {
                        final_state: state,
                        steps,
                        failure: Some(e),
                    }
                }
            };
            let diag = StepDiagnostics {
                step: o.state.step,
                time: o.state.time,
                dt: step_dt,
                retries,
                newton_iterations: o.iterations,
                krylov_iterations: o.krylov_iterations.clone(),
                clipped: o.clipped,
                oscillation: oscillation_metric(&o.state.p, self.disc.mesh(), &self.excluded_cells),
                macro_imbalance: self.disc.macro_stabilization_imbalance(&o.state, &state),
            };
            observer(&o.state, &diag);
            steps.push(diag);
            state = o.state;
            dt = (step_dt * sched.growth).min(sched.max_dt);
        }
        MarchOutcome {
            final_state: state,
            steps,
            failure: None,
        }
    }
}

/// Runs `problem` from its initial state with default options.
pub fn time_march(problem: &ProblemDefinition) -> MarchOutcome {
    let initial = SystemState::initial(problem);
    match Simulator::new(problem, SolverOptions::default()) {
        Ok(sim) => sim.time_march(&initial, |_, _| {}),
        Err(e) => MarchOutcome {
            final_state: initial,
            steps: Vec::new(),
            failure: Some(e),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{setup_barry_mercer, with_ratio, BarryMercerVariant};
    use crate::linear_solver::{direct_solve, IdentityPreconditioner};

    #[test]
    fn schedule_validation() {
        assert!(TimeSchedule::uniform(0.1, 1.0).validate().is_ok());
        let bad = TimeSchedule {
            growth: 0.5,
            ..TimeSchedule::uniform(0.1, 1.0)
        };
        assert!(bad.validate().is_err());
        assert!(TimeSchedule::uniform(0.0, 1.0).validate().is_err());
    }

    #[test]
    fn linear_problem_converges_in_one_newton_iteration() {
        let p = with_ratio(setup_barry_mercer(BarryMercerVariant::Undrained, 8).unwrap(), 1.0).unwrap();
        let sim = Simulator::new(&p, SolverOptions::default()).unwrap();
        let out = sim.newton_solve(&SystemState::initial(&p), 1e-4).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.residual_history[1] <= 1e-6);
    }

    #[test]
    fn preconditioned_gmres_matches_direct_solve() {
        let p = with_ratio(setup_barry_mercer(BarryMercerVariant::Modified, 8).unwrap(), 1.0).unwrap();
        let sim = Simulator::new(&p, SolverOptions::default()).unwrap();
        let prev = SystemState::initial(&p);
        let mut state = prev.clone();
        state.time = 1e-2;
        let jac = sim.disc.assemble_jacobian(&state, &prev, 1e-2).unwrap();
        let rhs: Vec<f64> = sim.disc.assemble_residual(&state, &prev, 1e-2).unwrap().stacked();
        let exact = direct_solve(&jac.to_sparse(), &rhs).unwrap();
        let flow = sim.flow_block(&jac, &state);
        let pc = BlockPreconditioner::new(&sim.elastic, &jac.us, &jac.up, &flow).unwrap();
        let x = gmres_solve(&jac, &rhs, &pc, &sim.options.gmres).unwrap().solution;
        let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in x.iter().zip(&exact) {
            assert!((a - b).abs() <= 1e-7 * scale);
        }
        // Unpreconditioned GMRES needs far more iterations on the same system.
        let opts = GmresOptions {
            max_iterations: 50,
            ..sim.options.gmres
        };
        assert!(gmres_solve(&jac, &rhs, &IdentityPreconditioner, &opts).is_err());
    }

    #[test]
    fn drained_steps_take_few_krylov_iterations() {
        let p = setup_barry_mercer(BarryMercerVariant::Drained, 16).unwrap();
        let (_, steps) = time_march(&p).into_result().unwrap();
        assert_eq!(steps.len(), 25);
        assert!(steps.iter().all(|s| s.krylov_iterations.iter().all(|&k| k <= 20)));
    }

    #[test]
    fn march_lands_on_the_end_time() {
        let mut p = setup_barry_mercer(BarryMercerVariant::Drained, 8).unwrap();
        p.schedule = TimeSchedule {
            initial_dt: 1e-4,
            max_dt: 3e-4,
            growth: 2.0,
            end_time: 1e-3,
        };
        let (state, steps) = time_march(&p).into_result().unwrap();
        let dts: Vec<f64> = steps.iter().map(|s| s.dt).collect();
        let expected = [1e-4, 2e-4, 3e-4, 3e-4, 1e-4];
        assert_eq!(dts.len(), expected.len());
        for (a, b) in dts.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((state.time - 1e-3).abs() < 1e-15);
        assert_eq!(state.step, 5);
    }

    #[test]
    fn failed_steps_are_retried_then_reported() {
        let p = setup_barry_mercer(BarryMercerVariant::Drained, 8).unwrap();
        let options = SolverOptions {
            max_newton_iterations: 0,
            max_step_retries: 2,
            ..SolverOptions::default()
        };
        let sim = Simulator::new(&p, options).unwrap();
        let out = sim.time_march(&SystemState::initial(&p), |_, _| {});
        assert!(out.steps.is_empty());
        assert_eq!(out.final_state.time, 0.0);
        match out.failure {
            Some(Error::StepRejected { step, retries, .. }) => assert_eq!((step, retries), (1, 2)),
            other => panic!("unexpected outcome {other:?}"),
        }
    }

    #[test]
    fn excluded_cells_cover_sources() {
        let p = setup_barry_mercer(BarryMercerVariant::Drained, 8).unwrap();
        let sim = Simulator::new(&p, SolverOptions::default()).unwrap();
        assert_eq!(sim.excluded_cells().len(), 1);
    }
}
