//! Complete description of a simulation: geometry, materials, boundary
//! conditions, sources, wells, stabilization and time schedule.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::analysis::tau_star;
use crate::constitutive::{FluidModel, RelPermModel, SolidModel};
use crate::mesh::{Side, StructuredMesh};
use crate::solver::TimeSchedule;
use crate::{Error, Result};

/// Kinematic constraint applied to every node of a boundary side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisplacementCondition {
    /// Traction free.
    Free,
    /// Zero normal displacement.
    Roller,
    /// Zero tangential displacement.
    Sliding,
    /// All components fixed.
    Clamped,
}

impl DisplacementCondition {
    /// Whether component `comp` is fixed on a side normal to `axis`.
    pub fn fixes(self, axis: usize, comp: usize) -> bool {
        match self {
            DisplacementCondition::Free => false,
            DisplacementCondition::Roller => comp == axis,
            DisplacementCondition::Sliding => comp != axis,
            DisplacementCondition::Clamped => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideCondition {
    pub side: Side,
    pub displacement: DisplacementCondition,
    /// Prescribed pressure; `None` means no flow through the side.
    pub pressure: Option<f64>,
    /// Wetting saturation of fluid entering through a pressure boundary.
    pub saturation: f64,
}

impl SideCondition {
    pub fn new(side: Side, displacement: DisplacementCondition, pressure: Option<f64>) -> Self {
        SideCondition {
            side,
            displacement,
            pressure,
            saturation: 1.0,
        }
    }
}

/// Scalar function of time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeFunction {
    Constant(f64),
    /// `amplitude · sin(frequency · t)`.
    Sine {
        amplitude: f64,
        frequency: f64,
    },
}

impl TimeFunction {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TimeFunction::Constant(v) => v,
            TimeFunction::Sine { amplitude, frequency } => amplitude * libm::sin(frequency * t),
        }
    }
}

/// Point source control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceControl {
    /// Volumetric injection rate of the wetting phase (m³/s per unit thickness in 2D).
    Rate(TimeFunction),
    /// Cell pressure held at the given value.
    Pressure(TimeFunction),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSource {
    pub location: [f64; 3],
    pub control: SourceControl,
}

/// Bottom-hole-pressure controlled well, Peaceman model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WellSpec {
    pub cell: usize,
    /// Target bottom-hole overpressure relative to the initial pressure (Pa).
    pub delta_bhp: f64,
    /// Linear ramp duration (s).
    pub ramp_time: f64,
    pub radius: f64,
    pub skin: f64,
}

impl WellSpec {
    pub fn validate(&self, num_cells: usize) -> Result<()> {
        if self.cell >= num_cells {
            return Err(Error::InvalidInput(format!(
                "well cell {} does not exist (mesh has {num_cells} cells)",
                self.cell
            )));
        }
        if !(self.radius > 0.0) {
            return Err(Error::InvalidInput(format!(
                "well radius must be positive, got {}",
                self.radius
            )));
        }
        if !(self.ramp_time >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "well ramp time must be non-negative, got {}",
                self.ramp_time
            )));
        }
        Ok(())
    }

    /// Bottom-hole overpressure at time `t`.
    pub fn overpressure(&self, t: f64) -> f64 {
        if self.ramp_time > 0.0 {
            self.delta_bhp * (t / self.ramp_time).clamp(0.0, 1.0)
        } else {
            self.delta_bhp
        }
    }
}

/// Pressure-jump stabilization on macroelement-interior faces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilizationSpec {
    pub tau: f64,
    /// `τ / τ*`.
    pub c: f64,
    pub enabled: bool,
}

impl StabilizationSpec {
    pub fn disabled() -> Self {
        StabilizationSpec {
            tau: 0.0,
            c: 0.0,
            enabled: false,
        }
    }

    /// `τ = c τ*(λ, G, b)`.
    pub fn from_ratio(c: f64, solid: &SolidModel) -> Result<Self> {
        if !(c >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "stabilization ratio must be >= 0, got {c}"
            )));
        }
        let ts = tau_star(solid.lambda, solid.shear, solid.biot);
        Ok(StabilizationSpec {
            tau: c * ts,
            c,
            enabled: c > 0.0,
        })
    }

    pub fn from_tau(tau: f64, solid: &SolidModel) -> Result<Self> {
        if !(tau >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "stabilization constant must be >= 0, got {tau}"
            )));
        }
        let ts = tau_star(solid.lambda, solid.shear, solid.biot);
        Ok(StabilizationSpec {
            tau,
            c: if ts > 0.0 { tau / ts } else { 0.0 },
            enabled: tau > 0.0,
        })
    }

    /// Effective constant, zero when disabled.
    pub fn effective_tau(&self) -> f64 {
        if self.enabled {
            self.tau
        } else {
            0.0
        }
    }
}

/// Number of flowing phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowModel {
    /// Wetting phase only; saturation is identically 1 and carries no unknowns.
    SinglePhase,
    TwoPhase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemDefinition {
    pub name: String,
    pub mesh: StructuredMesh,
    pub solid: SolidModel,
    pub wetting: FluidModel,
    pub nonwetting: FluidModel,
    pub flow: FlowModel,
    pub relperm: RelPermModel,
    /// Reference porosity per cell.
    pub porosity: Vec<f64>,
    /// Isotropic permeability per cell (m²).
    pub permeability: Vec<f64>,
    pub boundary: Vec<SideCondition>,
    pub sources: Vec<PointSource>,
    pub wells: Vec<WellSpec>,
    /// Gravitational acceleration magnitude, acting along the negative last axis.
    pub gravity: f64,
    pub stabilization: StabilizationSpec,
    pub schedule: TimeSchedule,
    pub initial_pressure: f64,
    pub initial_saturation: f64,
}

impl ProblemDefinition {
    pub fn validate(&self) -> Result<()> {
        let n = self.mesh.num_cells();
        for (what, v) in [("porosity", &self.porosity), ("permeability", &self.permeability)] {
            if v.len() != n {
                return Err(Error::SizeMismatch {
                    what,
                    expected: n,
                    found: v.len(),
                });
            }
        }
        if self.porosity.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidInput("cell porosity outside [0, 1]".into()));
        }
        if self.permeability.iter().any(|&k| !(k >= 0.0)) {
            return Err(Error::InvalidInput("negative cell permeability".into()));
        }
        for side in Side::sides(self.mesh.dim()) {
            let count = self.boundary.iter().filter(|b| b.side == *side).count();
            if count != 1 {
                return Err(Error::InvalidInput(format!(
                    "side {side:?} must have exactly one boundary condition, found {count}"
                )));
            }
        }
        for src in &self.sources {
            self.mesh.locate_point(&src.location[..self.mesh.dim()])?;
        }
        for w in &self.wells {
            w.validate(n)?;
        }
        if !(0.0..=1.0).contains(&self.initial_saturation) {
            return Err(Error::InvalidInput(format!(
                "initial saturation must lie in [0, 1], got {}",
                self.initial_saturation
            )));
        }
        self.schedule.validate()?;
        Ok(())
    }

    pub fn side_condition(&self, side: Side) -> &SideCondition {
        self.boundary
            .iter()
            .find(|b| b.side == side)
            .expect("validated problem has a condition on every side")
    }

    pub fn is_two_phase(&self) -> bool {
        self.flow == FlowModel::TwoPhase
    }

    /// Uniform-value cell field.
    pub fn uniform(&self, v: f64) -> Vec<f64> {
        vec![v; self.mesh.num_cells()]
    }

    /// Cells whose pressure is prescribed by a pressure-controlled source.
    pub fn pressure_controlled_cells(&self) -> Vec<usize> {
        let d = self.mesh.dim();
        let mut cells: Vec<usize> = self
            .sources
            .iter()
            .filter(|s| matches!(s.control, SourceControl::Pressure(_)))
            .filter_map(|s| self.mesh.locate_point(&s.location[..d]).ok())
            .collect();
        cells.sort_unstable();
        cells.dedup();
        cells
    }
}
