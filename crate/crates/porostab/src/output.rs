//! Output files.
//!
//! CSV schemas (version 1; columns are only ever appended):
//!
//! - `diagnostics.csv`: `step,time,dt,retries,newton_iterations,krylov_total,krylov_mean,clipped,oscillation,macro_imbalance`
//! - `spectrum.csv`: `kind,cells_per_side,c,tau,e_min,e_max,condition_number,deflated`
//! - `sweep.csv`: `c,tau,e_min,e_max,condition_number,krylov_iterations`
//! - `profile.csv`: `x,y,z,pressure,saturation`
//!
//! Snapshots are legacy VTK `STRUCTURED_POINTS` files with point-data
//! displacement and cell-data pressure and saturation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use porostab_core::assembly::SystemState;
use porostab_core::mesh::StructuredMesh;
use porostab_core::problem::ProblemDefinition;
use porostab_core::solver::{SolverOptions, StepDiagnostics};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const DIAGNOSTICS_HEADER: [&str; 10] = [
    "step",
    "time",
    "dt",
    "retries",
    "newton_iterations",
    "krylov_total",
    "krylov_mean",
    "clipped",
    "oscillation",
    "macro_imbalance",
];

pub const SPECTRUM_HEADER: [&str; 8] = [
    "kind",
    "cells_per_side",
    "c",
    "tau",
    "e_min",
    "e_max",
    "condition_number",
    "deflated",
];

pub const SWEEP_HEADER: [&str; 6] = ["c", "tau", "e_min", "e_max", "condition_number", "krylov_iterations"];

pub const PROFILE_HEADER: [&str; 5] = ["x", "y", "z", "pressure", "saturation"];

pub fn csv_writer(path: &Path, header: &[&str]) -> Result<csv::Writer<File>> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(header)?;
    Ok(w)
}

pub fn diagnostics_record(d: &StepDiagnostics) -> [String; 10] {
    [
        d.step.to_string(),
        d.time.to_string(),
        d.dt.to_string(),
        d.retries.to_string(),
        d.newton_iterations.to_string(),
        d.total_krylov().to_string(),
        d.mean_krylov().to_string(),
        d.clipped.to_string(),
        d.oscillation.to_string(),
        d.macro_imbalance.to_string(),
    ]
}

/// `snapshot_<t>.vtk`, with `t` the requested time in seconds.
pub fn snapshot_name(t: f64) -> String {
    format!("snapshot_{t}.vtk")
}

pub fn write_vtk(path: &Path, mesh: &StructuredMesh, state: &SystemState, title: &str) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    let dim = mesh.dim();
    let nodes = mesh.node_counts();
    let h = mesh.spacing();
    let origin = mesh.nodes()[0];
    let dims: Vec<usize> = (0..3).map(|a| if a < dim { nodes[a] } else { 1 }).collect();
    let spacing: Vec<f64> = (0..3).map(|a| if a < dim { h[a] } else { 1.0 }).collect();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {} {} {}", dims[0], dims[1], dims[2])?;
    writeln!(w, "ORIGIN {} {} {}", origin[0], origin[1], origin[2])?;
    writeln!(w, "SPACING {} {} {}", spacing[0], spacing[1], spacing[2])?;
    writeln!(w, "POINT_DATA {}", mesh.num_nodes())?;
    writeln!(w, "VECTORS displacement double")?;
    for n in 0..mesh.num_nodes() {
        let mut u = [0.0; 3];
        u[..dim].copy_from_slice(&state.u[n * dim..(n + 1) * dim]);
        writeln!(w, "{} {} {}", u[0], u[1], u[2])?;
    }
    writeln!(w, "CELL_DATA {}", mesh.num_cells())?;
    for (name, field) in [("pressure", &state.p), ("saturation", &state.s)] {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in field.iter() {
            writeln!(w, "{v}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Cell values along the line x = `x`, interpolated linearly between the two
/// nearest cell columns.
pub fn write_profile(path: &Path, mesh: &StructuredMesh, state: &SystemState, x: f64) -> Result<()> {
    let counts = mesh.cell_counts();
    let h = mesh.spacing();
    let x0 = mesh.nodes()[0][0];
    let xi = ((x - x0) / h[0] - 0.5).clamp(0.0, (counts[0] - 1) as f64);
    let i0 = (xi.floor() as usize).min(counts[0].saturating_sub(2));
    let i1 = (i0 + 1).min(counts[0] - 1);
    let t = xi - i0 as f64;
    let mut w = csv_writer(path, &PROFILE_HEADER)?;
    for k in 0..counts[2] {
        for j in 0..counts[1] {
            let (a, b) = (mesh.cell_index(i0, j, k), mesh.cell_index(i1, j, k));
            let c = mesh.cell_centroid(a);
            let p = (1.0 - t) * state.p[a] + t * state.p[b];
            let s = (1.0 - t) * state.s[a] + t * state.s[b];
            w.write_record([x, c[1], c[2], p, s].map(|v| v.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Where a failed run stopped: the step that could not be completed and the
/// time it started from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub step: usize,
    pub time: f64,
    pub reason: String,
}

/// Parameters recorded in the MANIFEST.
#[derive(Debug, Clone, Serialize)]
pub struct Parameters {
    pub problem: String,
    pub dimension: usize,
    pub cells: Vec<usize>,
    pub extent: Vec<f64>,
    pub flow: String,
    pub young: f64,
    pub poisson: f64,
    pub lambda: f64,
    pub shear: f64,
    pub biot: f64,
    pub grain_density: f64,
    pub wetting_density: f64,
    pub wetting_viscosity: f64,
    pub nonwetting_density: f64,
    pub nonwetting_viscosity: f64,
    pub min_permeability: f64,
    pub max_permeability: f64,
    pub min_porosity: f64,
    pub max_porosity: f64,
    pub gravity: f64,
    pub sources: usize,
    pub wells: usize,
    pub stabilization_enabled: bool,
    pub tau: f64,
    pub c: f64,
    pub initial_dt: f64,
    pub max_dt: f64,
    pub growth: f64,
    pub end_time: f64,
    pub initial_pressure: f64,
    pub initial_saturation: f64,
    pub newton_tolerance: f64,
    pub max_newton_iterations: usize,
    pub max_step_retries: usize,
    pub gmres_tolerance: f64,
    pub gmres_restart: usize,
    pub gmres_max_iterations: usize,
    pub preconditioner: String,
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

impl Parameters {
    pub fn new(p: &ProblemDefinition, o: &SolverOptions) -> Self {
        let dim = p.mesh.dim();
        let (min_permeability, max_permeability) = min_max(&p.permeability);
        let (min_porosity, max_porosity) = min_max(&p.porosity);
        Parameters {
            problem: p.name.clone(),
            dimension: dim,
            cells: p.mesh.cell_counts()[..dim].to_vec(),
            extent: p.mesh.extent()[..dim].to_vec(),
            flow: format!("{:?}", p.flow),
            young: p.solid.young,
            poisson: p.solid.poisson,
            lambda: p.solid.lambda,
            shear: p.solid.shear,
            biot: p.solid.biot,
            grain_density: p.solid.grain_density,
            wetting_density: p.wetting.reference_density,
            wetting_viscosity: p.wetting.viscosity,
            nonwetting_density: p.nonwetting.reference_density,
            nonwetting_viscosity: p.nonwetting.viscosity,
            min_permeability,
            max_permeability,
            min_porosity,
            max_porosity,
            gravity: p.gravity,
            sources: p.sources.len(),
            wells: p.wells.len(),
            stabilization_enabled: p.stabilization.enabled,
            tau: p.stabilization.tau,
            c: p.stabilization.c,
            initial_dt: p.schedule.initial_dt,
            max_dt: p.schedule.max_dt,
            growth: p.schedule.growth,
            end_time: p.schedule.end_time,
            initial_pressure: p.initial_pressure,
            initial_saturation: p.initial_saturation,
            newton_tolerance: o.newton_tolerance,
            max_newton_iterations: o.max_newton_iterations,
            max_step_retries: o.max_step_retries,
            gmres_tolerance: o.gmres.tolerance,
            gmres_restart: o.gmres.restart,
            gmres_max_iterations: o.gmres.max_iterations,
            preconditioner: format!("{:?}", o.flow_block),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub csv_schema: u32,
    pub config_sha256: String,
    /// `completed` or `failed`.
    pub status: String,
    pub failure: Option<Failure>,
    pub outputs: Vec<String>,
    pub parameters: Parameters,
    /// The configuration after command-line overrides.
    pub config: crate::config::RunConfig,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).context("cannot serialize MANIFEST")?;
        std::fs::write(dir.join("MANIFEST"), text).context("cannot write MANIFEST")?;
        Ok(())
    }
}
