//! The `simulate`, `analyze` and `sweep` commands.

use std::path::Path;

use anyhow::{Context, Result};
use porostab_core::analysis::{patch_test_numeric, scaled_schur_spectrum, stabilization_sweep};
use porostab_core::assembly::SystemState;
use porostab_core::problem::ProblemDefinition;
use porostab_core::solver::Simulator;
use porostab_core::Error as CoreError;

use crate::config::RunConfig;
use crate::output::{
    csv_writer, diagnostics_record, sha256_hex, snapshot_name, write_profile, write_vtk, Failure, Manifest, Parameters,
    CSV_SCHEMA_VERSION, DIAGNOSTICS_HEADER, SPECTRUM_HEADER, SWEEP_HEADER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Analyze,
    Sweep,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Analyze => "analyze",
            Command::Sweep => "sweep",
        }
    }
}

/// Result of a run whose artifacts were written.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub outputs: Vec<String>,
    pub failure: Option<Failure>,
}

impl RunSummary {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

/// Runs `command` and writes its artifacts plus a MANIFEST into the output
/// directory. `config_text` is the raw configuration, hashed into the MANIFEST.
pub fn run(command: Command, config: &RunConfig, config_text: &str) -> Result<RunSummary> {
    let problem = config.build_problem()?;
    let options = config.solver_options();
    let dir = &config.output.dir;
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    log::info!("{} {} into {}", command.name(), problem.name, dir.display());
    let summary = match command {
        Command::Simulate => simulate(config, &problem, dir)?,
        Command::Analyze => analyze(config, &problem, dir)?,
        Command::Sweep => sweep(config, &problem, dir)?,
    };
    Manifest {
        command: command.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        csv_schema: CSV_SCHEMA_VERSION,
        config_sha256: sha256_hex(config_text.as_bytes()),
        status: if summary.succeeded() { "completed" } else { "failed" }.into(),
        failure: summary.failure.clone(),
        outputs: summary.outputs.clone(),
        parameters: Parameters::new(&problem, &options),
        config: config.clone(),
    }
    .write(dir)?;
    Ok(summary)
}

fn simulate(config: &RunConfig, problem: &ProblemDefinition, dir: &Path) -> Result<RunSummary> {
    let sim = Simulator::new(problem, config.solver_options())?;
    let initial = SystemState::initial(problem);
    let mut outputs = vec!["diagnostics.csv".to_string()];
    let mut diagnostics = csv_writer(&dir.join("diagnostics.csv"), &DIAGNOSTICS_HEADER)?;

    let mut pending: Vec<f64> = config.output.snapshot_times.clone();
    pending.sort_by(f64::total_cmp);
    pending.dedup();
    pending.reverse();
    let mut take_snapshots = |state: &SystemState, outputs: &mut Vec<String>| -> Result<()> {
        while let Some(&t) = pending.last() {
            if t > state.time * (1.0 + 1e-12) {
                break;
            }
            let name = snapshot_name(t);
            write_vtk(
                &dir.join(&name),
                &problem.mesh,
                state,
                &format!("{} t = {}", problem.name, state.time),
            )?;
            outputs.push(name);
            pending.pop();
        }
        Ok(())
    };
    take_snapshots(&initial, &mut outputs)?;

    let mut write_error: Option<anyhow::Error> = None;
    let outcome = sim.time_march(&initial, |state, diag| {
        if write_error.is_some() {
            return;
        }
        let result = diagnostics
            .write_record(diagnostics_record(diag))
            .map_err(anyhow::Error::from)
            .and_then(|_| take_snapshots(state, &mut outputs));
        if let Err(e) = result {
            write_error = Some(e);
        }
    });
    diagnostics.flush()?;
    if let Some(e) = write_error {
        return Err(e);
    }
    let final_state = &outcome.final_state;
    for t in pending.iter().rev() {
        log::warn!("snapshot time {t} was not reached");
    }
    if config.output.snapshot_final {
        let name = snapshot_name(final_state.time);
        if !outputs.contains(&name) {
            write_vtk(
                &dir.join(&name),
                &problem.mesh,
                final_state,
                &format!("{} t = {}", problem.name, final_state.time),
            )?;
            outputs.push(name);
        }
    }
    if let Some(x) = config.output.profile_x {
        write_profile(&dir.join("profile.csv"), &problem.mesh, final_state, x)?;
        outputs.push("profile.csv".into());
    }
    let failure = outcome.failure.map(|e| {
        log::error!("simulation stopped: {e}");
        match e {
            CoreError::StepRejected { step, time, .. } => Failure {
                step,
                time,
                reason: e.to_string(),
            },
            other => Failure {
                step: final_state.step + 1,
                time: final_state.time,
                reason: other.to_string(),
            },
        }
    });
    Ok(RunSummary { outputs, failure })
}

fn analyze(config: &RunConfig, problem: &ProblemDefinition, dir: &Path) -> Result<RunSummary> {
    let tau = problem.stabilization.effective_tau();
    let mut w = csv_writer(&dir.join("spectrum.csv"), &SPECTRUM_HEADER)?;
    if config.analysis.patch {
        let solid = &problem.solid;
        let spec = patch_test_numeric(
            problem.mesh.dim(),
            problem.mesh.spacing(),
            solid.lambda,
            solid.shear,
            tau,
        )?;
        // e_min is the smallest eigenvalue above the constant pressure mode.
        w.write_record([
            "patch".to_string(),
            "2".into(),
            problem.stabilization.c.to_string(),
            tau.to_string(),
            spec.eigenvalues[1].to_string(),
            spec.eigenvalues.last().unwrap().to_string(),
            spec.condition_number.to_string(),
            "true".into(),
        ])?;
    }
    let r = scaled_schur_spectrum(problem, tau)?;
    w.write_record([
        "schur".to_string(),
        r.cells_per_side.to_string(),
        r.c.to_string(),
        r.tau.to_string(),
        r.e_min.to_string(),
        r.e_max.to_string(),
        r.condition_number.to_string(),
        r.deflated.to_string(),
    ])?;
    w.flush()?;
    Ok(RunSummary {
        outputs: vec!["spectrum.csv".into()],
        failure: None,
    })
}

fn sweep(config: &RunConfig, problem: &ProblemDefinition, dir: &Path) -> Result<RunSummary> {
    let rows = stabilization_sweep(problem, &config.analysis.sweep_c)?;
    let mut w = csv_writer(&dir.join("sweep.csv"), &SWEEP_HEADER)?;
    for row in &rows {
        let r = &row.report;
        w.write_record([
            row.c.to_string(),
            r.tau.to_string(),
            r.e_min.to_string(),
            r.e_max.to_string(),
            r.condition_number.to_string(),
            row.krylov_iterations.map(|k| k.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(RunSummary {
        outputs: vec!["sweep.csv".into()],
        failure: None,
    })
}
