//! Run configuration, read from TOML.
//!
//! Every table rejects unknown keys. A configuration names either one of the
//! built-in benchmarks or an inline problem:
//!
//! ```toml
//! [problem]
//! benchmark = "barry-mercer-undrained"
//! mesh_n = 16
//!
//! [stabilization]
//! mode = "c-ratio"
//! value = 1.0
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use porostab_core::benchmarks::{setup_barry_mercer, setup_staircase, BarryMercerVariant};
use porostab_core::constitutive::{Compressibility, FluidModel, RelPermModel, SolidModel};
use porostab_core::linear_solver::FlowBlockApproximation;
use porostab_core::mesh::{build_structured_mesh, Side};
use porostab_core::problem::{
    DisplacementCondition, FlowModel, PointSource, ProblemDefinition, SideCondition, SourceControl, StabilizationSpec,
    TimeFunction, WellSpec,
};
use porostab_core::solver::{SolverOptions, TimeSchedule};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSource,
    #[serde(default)]
    pub stabilization: StabilizationConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSource {
    /// `barry-mercer-drained`, `barry-mercer-undrained`, `barry-mercer-modified` or `staircase`.
    pub benchmark: Option<String>,
    /// Cells per side; defaults to 16 for Barry-Mercer and 12 for the staircase.
    pub mesh_n: Option<usize>,
    /// Staircase only.
    pub gravity: Option<bool>,
    pub inline: Option<InlineProblem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilizationMode {
    #[default]
    Off,
    /// `value` is τ.
    FixedTau,
    /// `value` is c = τ/τ*.
    CRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StabilizationConfig {
    #[serde(default)]
    pub mode: StabilizationMode,
    #[serde(default)]
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preconditioner {
    #[default]
    FixedStress,
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub newton_tolerance: Option<f64>,
    pub max_newton_iterations: Option<usize>,
    pub max_step_retries: Option<usize>,
    pub gmres_tolerance: Option<f64>,
    pub gmres_restart: Option<usize>,
    pub gmres_max_iterations: Option<usize>,
    pub preconditioner: Option<Preconditioner>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// Snapshot times in seconds.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default = "yes")]
    pub snapshot_final: bool,
    /// Writes `profile.csv`, the final pressure along the line x = profile_x.
    pub profile_x: Option<f64>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_out_dir(),
            snapshot_times: Vec::new(),
            snapshot_final: true,
            profile_x: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Include the single-macroelement patch spectrum in `spectrum.csv`.
    #[serde(default = "yes")]
    pub patch: bool,
    #[serde(default = "default_sweep")]
    pub sweep_c: Vec<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            patch: true,
            sweep_c: default_sweep(),
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

fn default_sweep() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 3.0, 4.0]
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InlineProblem {
    #[serde(default = "default_name")]
    pub name: String,
    pub extent: Vec<f64>,
    pub cells: Vec<usize>,
    pub solid: SolidConfig,
    pub wetting: FluidConfig,
    /// Present for two-phase flow.
    pub nonwetting: Option<FluidConfig>,
    #[serde(default)]
    pub relperm: RelPermConfig,
    /// Isotropic permeability (m²).
    pub permeability: f64,
    pub boundary: Vec<BoundaryConfig>,
    #[serde(default)]
    pub sources: Vec<SourceConfig>,
    #[serde(default)]
    pub wells: Vec<WellConfig>,
    #[serde(default)]
    pub gravity: f64,
    #[serde(default)]
    pub initial_pressure: f64,
    #[serde(default = "one")]
    pub initial_saturation: f64,
    pub schedule: ScheduleConfig,
}

fn default_name() -> String {
    "inline".into()
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolidConfig {
    pub young: f64,
    pub poisson: f64,
    /// Omitted for incompressible grains.
    pub grain_bulk_modulus: Option<f64>,
    pub grain_density: f64,
    pub porosity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FluidConfig {
    pub density: f64,
    /// Omitted for an incompressible fluid.
    pub bulk_modulus: Option<f64>,
    pub viscosity: f64,
    #[serde(default)]
    pub reference_pressure: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RelPermConfig {
    pub residual_wetting: f64,
    pub residual_nonwetting: f64,
    pub exponent: f64,
}

impl Default for RelPermConfig {
    fn default() -> Self {
        RelPermConfig {
            residual_wetting: 0.0,
            residual_nonwetting: 0.0,
            exponent: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SideName {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl From<SideName> for Side {
    fn from(s: SideName) -> Side {
        match s {
            SideName::XMin => Side::XMin,
            SideName::XMax => Side::XMax,
            SideName::YMin => Side::YMin,
            SideName::YMax => Side::YMax,
            SideName::ZMin => Side::ZMin,
            SideName::ZMax => Side::ZMax,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisplacementName {
    Free,
    Roller,
    Sliding,
    Clamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    pub side: SideName,
    pub displacement: DisplacementName,
    /// Prescribed pressure; omitted for a no-flow side.
    pub pressure: Option<f64>,
    #[serde(default = "one")]
    pub saturation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlName {
    Rate,
    Pressure,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub location: Vec<f64>,
    pub control: ControlName,
    /// Constant value, or amplitude when `frequency` is given.
    pub value: f64,
    /// Makes the control `value · sin(frequency · t)`.
    pub frequency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct WellConfig {
    pub location: Vec<f64>,
    pub delta_bhp: f64,
    #[serde(default)]
    pub ramp_time: f64,
    pub radius: f64,
    #[serde(default)]
    pub skin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub initial_dt: f64,
    pub max_dt: Option<f64>,
    #[serde(default = "one")]
    pub growth: f64,
    pub end_time: f64,
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let config = parse_config_str(&text).with_context(|| format!("invalid configuration {}", path.display()))?;
    log::info!("configuration {}: {config:?}", path.display());
    Ok(config)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let config: RunConfig = toml::from_str(text)?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        match (&p.benchmark, &p.inline) {
            (Some(_), Some(_)) => bail!("problem: give either `benchmark` or `inline`, not both"),
            (None, None) => bail!("problem: one of `benchmark` or `inline` is required"),
            _ => {}
        }
        if let Some(name) = &p.benchmark {
            benchmark_kind(name)?;
        }
        if p.inline.is_some() && p.gravity.is_some() {
            bail!("problem.gravity: applies to benchmarks only; set problem.inline.gravity instead");
        }
        if p.mesh_n == Some(0) {
            bail!("problem.mesh_n: must be positive");
        }
        let s = &self.stabilization;
        if !(s.value >= 0.0) {
            bail!("stabilization.value: must be >= 0, got {}", s.value);
        }
        if s.mode == StabilizationMode::Off && s.value != 0.0 {
            bail!("stabilization.value: must be omitted when stabilization.mode = \"off\"");
        }
        if let Some(c) = self.analysis.sweep_c.iter().find(|c| !(**c >= 0.0)) {
            bail!("analysis.sweep_c: entries must be >= 0, got {c}");
        }
        if let Some(t) = self.output.snapshot_times.iter().find(|t| !(**t >= 0.0)) {
            bail!("output.snapshot_times: entries must be >= 0, got {t}");
        }
        Ok(())
    }

    /// Applies the `--c` and `--mesh-n` command-line overrides.
    pub fn with_overrides(mut self, c: Option<f64>, mesh_n: Option<usize>) -> Result<Self> {
        if let Some(c) = c {
            self.stabilization = StabilizationConfig {
                mode: StabilizationMode::CRatio,
                value: c,
            };
        }
        if mesh_n.is_some() {
            self.problem.mesh_n = mesh_n;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn solver_options(&self) -> SolverOptions {
        let mut o = SolverOptions::default();
        let s = &self.solver;
        if let Some(v) = s.newton_tolerance {
            o.newton_tolerance = v;
        }
        if let Some(v) = s.max_newton_iterations {
            o.max_newton_iterations = v;
        }
        if let Some(v) = s.max_step_retries {
            o.max_step_retries = v;
        }
        if let Some(v) = s.gmres_tolerance {
            o.gmres.tolerance = v;
        }
        if let Some(v) = s.gmres_restart {
            o.gmres.restart = v;
        }
        if let Some(v) = s.gmres_max_iterations {
            o.gmres.max_iterations = v;
        }
        o.flow_block = match s.preconditioner.unwrap_or_default() {
            Preconditioner::FixedStress => FlowBlockApproximation::FixedStress,
            Preconditioner::Plain => FlowBlockApproximation::Plain,
        };
        o
    }

    /// Builds the problem, including the stabilization setting.
    pub fn build_problem(&self) -> Result<ProblemDefinition> {
        let src = &self.problem;
        let mut problem = match (&src.benchmark, &src.inline) {
            (Some(name), None) => match benchmark_kind(name)? {
                Benchmark::BarryMercer(v) => {
                    if src.gravity.is_some() {
                        bail!("problem.gravity: the Barry-Mercer benchmarks have no gravity");
                    }
                    setup_barry_mercer(v, src.mesh_n.unwrap_or(16))?
                }
                Benchmark::Staircase => setup_staircase(src.mesh_n.unwrap_or(12), src.gravity.unwrap_or(false))?,
            },
            (None, Some(inline)) => inline.build(src.mesh_n)?,
            _ => unreachable!("validated"),
        };
        let s = &self.stabilization;
        problem.stabilization = match s.mode {
            StabilizationMode::Off => StabilizationSpec::disabled(),
            StabilizationMode::FixedTau => StabilizationSpec::from_tau(s.value, &problem.solid)?,
            StabilizationMode::CRatio => StabilizationSpec::from_ratio(s.value, &problem.solid)?,
        };
        problem.validate()?;
        Ok(problem)
    }
}

enum Benchmark {
    BarryMercer(BarryMercerVariant),
    Staircase,
}

fn benchmark_kind(name: &str) -> Result<Benchmark> {
    if name == "staircase" {
        return Ok(Benchmark::Staircase);
    }
    match name.strip_prefix("barry-mercer-").map(str::parse::<BarryMercerVariant>) {
        Some(Ok(v)) => Ok(Benchmark::BarryMercer(v)),
        _ => bail!(
            "problem.benchmark: unknown benchmark {name:?}; expected barry-mercer-drained, \
             barry-mercer-undrained, barry-mercer-modified or staircase"
        ),
    }
}

fn compressibility(modulus: Option<f64>) -> Compressibility {
    modulus.map_or(Compressibility::Incompressible, Compressibility::BulkModulus)
}

fn point(location: &[f64], dim: usize, key: &str) -> Result<[f64; 3]> {
    if location.len() != dim {
        bail!("{key}: expected {dim} coordinates, got {}", location.len());
    }
    let mut x = [0.0; 3];
    x[..dim].copy_from_slice(location);
    Ok(x)
}

impl InlineProblem {
    fn build(&self, mesh_n: Option<usize>) -> Result<ProblemDefinition> {
        let dim = self.extent.len();
        if !(dim == 2 || dim == 3) || self.cells.len() != dim {
            bail!("problem.inline.extent/cells: need 2 or 3 matching entries");
        }
        let cells = match mesh_n {
            Some(n) => vec![n; dim],
            None => self.cells.clone(),
        };
        let mesh = build_structured_mesh(&self.extent, &cells).context("problem.inline.cells")?;
        let s = &self.solid;
        let solid = SolidModel::new(
            s.young,
            s.poisson,
            compressibility(s.grain_bulk_modulus),
            s.grain_density,
            s.porosity,
        )
        .context("problem.inline.solid")?;
        let fluid = |f: &FluidConfig, key: &str| {
            FluidModel::new(
                f.density,
                compressibility(f.bulk_modulus),
                f.viscosity,
                f.reference_pressure,
            )
            .with_context(|| format!("problem.inline.{key}"))
        };
        let wetting = fluid(&self.wetting, "wetting")?;
        let (flow, nonwetting) = match &self.nonwetting {
            Some(f) => (FlowModel::TwoPhase, fluid(f, "nonwetting")?),
            None => (FlowModel::SinglePhase, wetting),
        };
        let r = &self.relperm;
        let relperm = RelPermModel::new(r.residual_wetting, r.residual_nonwetting, r.exponent)
            .context("problem.inline.relperm")?;
        let boundary = self
            .boundary
            .iter()
            .map(|b| {
                let displacement = match b.displacement {
                    DisplacementName::Free => DisplacementCondition::Free,
                    DisplacementName::Roller => DisplacementCondition::Roller,
                    DisplacementName::Sliding => DisplacementCondition::Sliding,
                    DisplacementName::Clamped => DisplacementCondition::Clamped,
                };
                let mut c = SideCondition::new(b.side.into(), displacement, b.pressure);
                c.saturation = b.saturation;
                c
            })
            .collect();
        let mut sources = Vec::new();
        for (i, src) in self.sources.iter().enumerate() {
            let f = match src.frequency {
                Some(frequency) => TimeFunction::Sine {
                    amplitude: src.value,
                    frequency,
                },
                None => TimeFunction::Constant(src.value),
            };
            let control = match src.control {
                ControlName::Rate => SourceControl::Rate(f),
                ControlName::Pressure => SourceControl::Pressure(f),
            };
            sources.push(PointSource {
                location: point(&src.location, dim, &format!("problem.inline.sources[{i}].location"))?,
                control,
            });
        }
        let mut wells = Vec::new();
        for (i, w) in self.wells.iter().enumerate() {
            let key = format!("problem.inline.wells[{i}].location");
            let x = point(&w.location, dim, &key)?;
            let cell = mesh.locate_point(&x[..dim]).context(key)?;
            wells.push(WellSpec {
                cell,
                delta_bhp: w.delta_bhp,
                ramp_time: w.ramp_time,
                radius: w.radius,
                skin: w.skin,
            });
        }
        let sc = &self.schedule;
        let n = mesh.num_cells();
        Ok(ProblemDefinition {
            name: self.name.clone(),
            mesh,
            porosity: vec![s.porosity; n],
            permeability: vec![self.permeability; n],
            solid,
            wetting,
            nonwetting,
            flow,
            relperm,
            boundary,
            sources,
            wells,
            gravity: self.gravity,
            stabilization: StabilizationSpec::disabled(),
            schedule: TimeSchedule {
                initial_dt: sc.initial_dt,
                max_dt: sc.max_dt.unwrap_or(sc.initial_dt),
                growth: sc.growth,
                end_time: sc.end_time,
            },
            initial_pressure: self.initial_pressure,
            initial_saturation: self.initial_saturation,
        })
    }
}
