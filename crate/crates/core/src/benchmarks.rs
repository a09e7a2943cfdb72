//! Barry–Mercer variants, the spiral staircase problem, and the metrics used
//! to compare runs.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::str::FromStr;

use crate::constitutive::{Compressibility, FluidModel, RelPermModel, SolidModel};
use crate::mesh::{build_structured_mesh, Side, StructuredMesh};
use crate::problem::{
    DisplacementCondition, FlowModel, PointSource, ProblemDefinition, SideCondition, SourceControl, StabilizationSpec,
    TimeFunction, WellSpec,
};
use crate::solver::{time_march, TimeSchedule};
use crate::{Error, Result};

pub const DAY: f64 = 86_400.0;
/// One millidarcy in m².
pub const MILLIDARCY: f64 = 9.869_233e-16;
/// Source location of every Barry–Mercer variant.
pub const BARRY_MERCER_SOURCE: [f64; 3] = [0.25, 0.25, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarryMercerVariant {
    Drained,
    Undrained,
    /// Pressure-controlled source.
    Modified,
}

impl FromStr for BarryMercerVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drained" => Ok(Self::Drained),
            "undrained" => Ok(Self::Undrained),
            "modified" => Ok(Self::Modified),
            other => Err(Error::InvalidInput(format!(
                "unknown Barry-Mercer variant '{other}' (expected drained, undrained or modified)"
            ))),
        }
    }
}

/// Barry–Mercer source frequency `β = (λ + 2G) κ / μ`.
pub fn barry_mercer_beta(solid: &SolidModel, permeability: f64, viscosity: f64) -> f64 {
    solid.constrained_modulus() * permeability / viscosity
}

/// Unit square, zero pressure and zero tangential displacement on every side,
/// single-phase flow with incompressible constituents. Stabilization is off;
/// set `problem.stabilization` to enable it.
pub fn setup_barry_mercer(variant: BarryMercerVariant, mesh_n: usize) -> Result<ProblemDefinition> {
    let mesh = build_structured_mesh(&[1.0, 1.0], &[mesh_n, mesh_n])?;
    let (young, poisson, perm) = match variant {
        BarryMercerVariant::Drained => (1e5, 0.1, 1e-5),
        BarryMercerVariant::Undrained => (1e5, 0.1, 1e-9),
        BarryMercerVariant::Modified => (2.5, 0.25, 1e-11),
    };
    let solid = SolidModel::new(young, poisson, Compressibility::Incompressible, 2650.0, 0.2)?;
    let water = FluidModel::new(1e3, Compressibility::Incompressible, 1e-3, 0.0)?;
    // The rate source keeps the drained frequency in the undrained variant.
    let beta = barry_mercer_beta(&solid, 1e-5, water.viscosity);
    let (control, schedule) = match variant {
        BarryMercerVariant::Drained => (
            SourceControl::Rate(TimeFunction::Sine {
                amplitude: 2.0 * beta,
                frequency: beta,
            }),
            TimeSchedule::uniform(2.0 * PI / (100.0 * beta), PI / (2.0 * beta)),
        ),
        BarryMercerVariant::Undrained => (
            SourceControl::Rate(TimeFunction::Sine {
                amplitude: 2.0 * beta,
                frequency: beta,
            }),
            TimeSchedule::uniform(1e-4, 1e-4),
        ),
        BarryMercerVariant::Modified => (
            SourceControl::Pressure(TimeFunction::Sine {
                amplitude: 1.0,
                frequency: 1.0,
            }),
            TimeSchedule::uniform(1e-2, 1e-2),
        ),
    };
    let n = mesh.num_cells();
    let boundary = Side::sides(2)
        .iter()
        .map(|&s| SideCondition::new(s, DisplacementCondition::Sliding, Some(0.0)))
        .collect();
    let name = match variant {
        BarryMercerVariant::Drained => "barry-mercer-drained",
        BarryMercerVariant::Undrained => "barry-mercer-undrained",
        BarryMercerVariant::Modified => "barry-mercer-modified",
    };
    Ok(ProblemDefinition {
        name: String::from(name),
        mesh,
        solid,
        wetting: water,
        nonwetting: water,
        flow: FlowModel::SinglePhase,
        relperm: RelPermModel::default(),
        porosity: vec![solid.reference_porosity; n],
        permeability: vec![perm; n],
        boundary,
        sources: vec![PointSource {
            location: BARRY_MERCER_SOURCE,
            control,
        }],
        wells: Vec::new(),
        gravity: 0.0,
        stabilization: StabilizationSpec::disabled(),
        schedule,
        initial_pressure: 0.0,
        initial_saturation: 1.0,
    })
}

/// Sets the stabilization of `problem` to `τ = c τ*`.
pub fn with_ratio(mut problem: ProblemDefinition, c: f64) -> Result<ProblemDefinition> {
    problem.stabilization = StabilizationSpec::from_ratio(c, &problem.solid)?;
    Ok(problem)
}

/// Reference pressure for the drained problem: the stabilized (`c = 1`)
/// solution at the final time on a `mesh_n_fine` grid.
pub fn barry_mercer_reference(mesh_n_fine: usize) -> Result<(StructuredMesh, Vec<f64>)> {
    let problem = with_ratio(setup_barry_mercer(BarryMercerVariant::Drained, mesh_n_fine)?, 1.0)?;
    let (state, _) = time_march(&problem).into_result()?;
    Ok((problem.mesh, state.p))
}

/// Bilinear interpolation of a cell-centred field of `fine` at the cell
/// centroids of `coarse`; values beyond the outermost centroids are clamped.
pub fn restrict_to(fine: &StructuredMesh, field: &[f64], coarse: &StructuredMesh) -> Vec<f64> {
    let dim = fine.dim();
    let counts = fine.cell_counts();
    let h = fine.spacing();
    (0..coarse.num_cells())
        .map(|c| {
            let x = coarse.cell_centroid(c);
            let mut lo = [0usize; 3];
            let mut w = [0.0f64; 3];
            for a in 0..dim {
                let t = (x[a] / h[a] - 0.5).clamp(0.0, (counts[a] - 1) as f64);
                let i = (libm::floor(t) as usize).min(counts[a].saturating_sub(2));
                lo[a] = i;
                w[a] = t - i as f64;
            }
            let mut v = 0.0;
            for corner in 0..(1usize << dim) {
                let mut idx = [0usize; 3];
                let mut weight = 1.0;
                for a in 0..dim {
                    let up = (corner >> a) & 1 == 1;
                    idx[a] = lo[a] + up as usize;
                    weight *= if up { w[a] } else { 1.0 - w[a] };
                }
                if weight != 0.0 {
                    v += weight * field[fine.cell_index(idx[0], idx[1], idx[2])];
                }
            }
            v
        })
        .collect()
}

/// `‖p − p_ref‖ / ‖p_ref‖` on a uniform grid.
pub fn relative_l2_error(p: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = p.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = reference.iter().map(|b| b * b).sum();
    libm::sqrt(num / den)
}

/// Root-mean-square pressure jump over macroelement-interior faces, skipping
/// faces next to any cell in `excluded`.
pub fn oscillation_metric(p: &[f64], mesh: &StructuredMesh, excluded: &[usize]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for f in mesh.faces() {
        let Some(l) = f.l else { continue };
        if !f.macro_interior || excluded.contains(&f.k) || excluded.contains(&l) {
            continue;
        }
        let j = p[l] - p[f.k];
        sum += j * j;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        libm::sqrt(sum / count as f64)
    }
}

/// Cells of the spiral channel, ordered from the injector down to the producer.
///
/// The channel runs along the edges of a square ring inset by a quarter of the
/// grid from the lateral sides, starting in the top layer and dropping one
/// layer at every corner, so each quarter turn descends one layer.
pub fn staircase_channel(n: usize) -> Result<Vec<usize>> {
    if n < 6 || !n.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "staircase needs an even number of cells per axis of at least 6, got {n}"
        )));
    }
    let a = n / 4;
    let b = n - 1 - n / 4;
    let corners = [(a, a), (b, a), (b, b), (a, b)];
    let index = |i: usize, j: usize, k: usize| i + n * (j + n * k);
    let mut cells = Vec::new();
    let mut k = n - 1;
    let mut leg = 0;
    loop {
        let (i0, j0) = corners[leg % 4];
        let (i1, j1) = corners[(leg + 1) % 4];
        let steps = i0.abs_diff(i1).max(j0.abs_diff(j1));
        for t in 0..steps {
            let step = |a: usize, b: usize| match b.cmp(&a) {
                core::cmp::Ordering::Greater => a + t,
                core::cmp::Ordering::Less => a - t,
                core::cmp::Ordering::Equal => a,
            };
            let (i, j) = (step(i0, i1), step(j0, j1));
            cells.push(index(i, j, k));
        }
        // Corner cell on this layer, then drop one layer.
        cells.push(index(i1, j1, k));
        if k == 0 {
            break;
        }
        k -= 1;
        leg += 1;
    }
    cells.dedup();
    Ok(cells)
}

/// Cubic spiral-channel problem at `scale³` cells, two-phase, incompressible
/// fluids, bottom-hole-pressure controlled injector and producer at the two
/// ends of the channel. Stabilization is off.
pub fn setup_staircase(scale: usize, gravity: bool) -> Result<ProblemDefinition> {
    const EDGE: f64 = 100.0;
    let channel = staircase_channel(scale)?;
    let mesh = build_structured_mesh(&[EDGE; 3], &[scale; 3])?;
    let solid = SolidModel::new(5e9, 0.25, Compressibility::Incompressible, 2650.0, 0.05)?;
    let water = FluidModel::new(1035.0, Compressibility::Incompressible, 0.3e-3, 0.0)?;
    let oil = FluidModel::new(863.0, Compressibility::Incompressible, 3.0e-3, 0.0)?;
    let n = mesh.num_cells();
    let mut porosity = vec![0.05; n];
    let mut permeability = vec![MILLIDARCY; n];
    for &c in &channel {
        porosity[c] = 0.20;
        permeability[c] = 1000.0 * MILLIDARCY;
    }
    let boundary = Side::sides(3)
        .iter()
        .map(|&s| {
            let d = if s == Side::ZMax {
                DisplacementCondition::Free
            } else {
                DisplacementCondition::Roller
            };
            SideCondition::new(s, d, None)
        })
        .collect();
    let well = |cell: usize, delta_bhp: f64| WellSpec {
        cell,
        delta_bhp,
        ramp_time: DAY,
        radius: 0.1524,
        skin: 0.0,
    };
    Ok(ProblemDefinition {
        name: String::from("staircase"),
        mesh,
        solid,
        wetting: water,
        nonwetting: oil,
        flow: FlowModel::TwoPhase,
        relperm: RelPermModel::new(0.2, 0.2, 2.0)?,
        porosity,
        permeability,
        boundary,
        sources: Vec::new(),
        wells: vec![well(channel[0], 5e6), well(*channel.last().unwrap(), -5e6)],
        gravity: if gravity { 9.81 } else { 0.0 },
        stabilization: StabilizationSpec::disabled(),
        schedule: TimeSchedule {
            initial_dt: 1e-4 * DAY,
            max_dt: DAY,
            growth: 2.0,
            end_time: 100.0 * DAY,
        },
        initial_pressure: 0.0,
        initial_saturation: 0.2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_mesh;

    #[test]
    fn drained_time_step_and_end_time() {
        let p = setup_barry_mercer(BarryMercerVariant::Drained, 8).unwrap();
        let beta = barry_mercer_beta(&p.solid, 1e-5, 1e-3);
        assert!((beta - 1022.7).abs() < 0.05);
        assert!((p.schedule.initial_dt - 6.14e-5).abs() < 0.005e-5);
        assert!((p.schedule.end_time - 1.54e-3).abs() < 0.005e-3);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn variant_names_parse() {
        assert_eq!(
            "modified".parse::<BarryMercerVariant>().unwrap(),
            BarryMercerVariant::Modified
        );
        assert!("semi".parse::<BarryMercerVariant>().is_err());
    }

    #[test]
    fn restriction_of_a_field_onto_its_own_mesh_is_exact() {
        let m = build_structured_mesh(&[1.0, 1.0], &[8, 8]).unwrap();
        let f: Vec<f64> = (0..64).map(|i| (i * i) as f64).collect();
        assert_eq!(restrict_to(&m, &f, &m), f);
        assert_eq!(relative_l2_error(&f, &f), 0.0);
    }

    #[test]
    fn restriction_reproduces_linear_fields() {
        let fine = build_structured_mesh(&[1.0, 1.0], &[16, 16]).unwrap();
        let coarse = build_structured_mesh(&[1.0, 1.0], &[4, 4]).unwrap();
        let lin = |x: [f64; 3]| 2.0 * x[0] - 3.0 * x[1] + 1.0;
        let f: Vec<f64> = (0..fine.num_cells()).map(|c| lin(fine.cell_centroid(c))).collect();
        let r = restrict_to(&fine, &f, &coarse);
        for c in 0..coarse.num_cells() {
            assert!((r[c] - lin(coarse.cell_centroid(c))).abs() < 1e-12);
        }
    }

    #[test]
    fn oscillation_metric_examples() {
        let m = build_structured_mesh(&[1.0, 1.0], &[4, 4]).unwrap();
        assert_eq!(oscillation_metric(&[3.0; 16], &m, &[]), 0.0);
        let lin: Vec<f64> = (0..16).map(|c| m.cell_centroid(c)[0]).collect();
        assert!((oscillation_metric(&lin, &m, &[]) - 0.25 / libm::sqrt(2.0)).abs() < 1e-12);
        let checker: Vec<f64> = (0..16)
            .map(|c| {
                let ijk = m.cell_ijk(c);
                if (ijk[0] + ijk[1]).is_multiple_of(2) {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        assert!((oscillation_metric(&checker, &m, &[]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn staircase_channel_is_connected_and_descends() {
        let n = 12;
        let ch = staircase_channel(n).unwrap();
        let ijk = |c: usize| [c % n, (c / n) % n, c / (n * n)];
        assert_eq!(ijk(ch[0])[2], n - 1);
        assert_eq!(ijk(*ch.last().unwrap())[2], 0);
        for w in ch.windows(2) {
            let (a, b) = (ijk(w[0]), ijk(w[1]));
            let d: usize = (0..3).map(|x| a[x].abs_diff(b[x])).sum();
            assert_eq!(d, 1, "channel cells {a:?} and {b:?} are not face neighbours");
            assert!(b[2] <= a[2]);
        }
        let mut sorted = ch.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), ch.len());
        assert!(staircase_channel(5).is_err());
    }

    #[test]
    fn staircase_problem_is_valid() {
        let p = setup_staircase(6, false).unwrap();
        assert!(p.validate().is_ok());
        assert_eq!(p.wells.len(), 2);
        assert_eq!(
            p.porosity.iter().filter(|&&x| x == 0.2).count(),
            staircase_channel(6).unwrap().len()
        );
    }
}
