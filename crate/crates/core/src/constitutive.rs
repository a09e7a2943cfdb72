//! Solid elasticity, fluid equations of state, relative permeability and
//! porosity evolution.

use alloc::format;

use crate::{Error, Result};

/// Bulk modulus of a phase. Incompressible phases carry an explicit flag so
/// that `1 / K` is exactly zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Compressibility {
    Incompressible,
    BulkModulus(f64),
}

impl Compressibility {
    /// `1 / K`, exactly 0 for incompressible phases.
    pub fn inverse_modulus(self) -> f64 {
        match self {
            Compressibility::Incompressible => 0.0,
            Compressibility::BulkModulus(k) => 1.0 / k,
        }
    }

    pub fn is_incompressible(self) -> bool {
        matches!(self, Compressibility::Incompressible)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Wetting,
    NonWetting,
}

/// Lamé parameters `(λ, G)` from Young's modulus and Poisson ratio.
pub fn lame_from_young_poisson(young: f64, poisson: f64) -> Result<(f64, f64)> {
    if !(young > 0.0) {
        return Err(Error::InvalidInput(format!(
            "Young's modulus must be positive, got {young}"
        )));
    }
    if !(poisson > -1.0 && poisson < 0.5) {
        return Err(Error::InvalidInput(format!(
            "Poisson ratio must lie in (-1, 0.5), got {poisson}"
        )));
    }
    let lambda = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
    let shear = young / (2.0 * (1.0 + poisson));
    Ok((lambda, shear))
}

/// Isotropic linear elastic skeleton with Biot coupling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolidModel {
    pub young: f64,
    pub poisson: f64,
    pub lambda: f64,
    pub shear: f64,
    pub drained_bulk: f64,
    pub grain: Compressibility,
    pub biot: f64,
    pub grain_density: f64,
    pub reference_porosity: f64,
}

impl SolidModel {
    pub fn new(
        young: f64,
        poisson: f64,
        grain: Compressibility,
        grain_density: f64,
        reference_porosity: f64,
    ) -> Result<Self> {
        let (lambda, shear) = lame_from_young_poisson(young, poisson)?;
        let drained_bulk = lambda + 2.0 * shear / 3.0;
        let biot = match grain {
            Compressibility::Incompressible => 1.0,
            Compressibility::BulkModulus(ks) => {
                if !(ks > drained_bulk) {
                    return Err(Error::InvalidInput(format!(
                        "grain bulk modulus {ks} must exceed the drained bulk modulus {drained_bulk}"
                    )));
                }
                1.0 - drained_bulk / ks
            }
        };
        if !(0.0..=1.0).contains(&reference_porosity) {
            return Err(Error::InvalidInput(format!(
                "reference porosity must lie in [0, 1], got {reference_porosity}"
            )));
        }
        Ok(SolidModel {
            young,
            poisson,
            lambda,
            shear,
            drained_bulk,
            grain,
            biot,
            grain_density,
            reference_porosity,
        })
    }

    /// Coefficient of `Δp` in the porosity update, `(b − φ₀) / K_s`.
    pub fn porosity_pressure_coefficient(&self, reference_porosity: f64) -> f64 {
        (self.biot - reference_porosity) * self.grain.inverse_modulus()
    }

    /// `λ + 2G`, the constrained (oedometric) modulus.
    pub fn constrained_modulus(&self) -> f64 {
        self.lambda + 2.0 * self.shear
    }
}

/// Fluid phase with the linear density law `ρ = ρ⁰ [1 + (p − p⁰) / K]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluidModel {
    pub reference_density: f64,
    pub compressibility: Compressibility,
    pub viscosity: f64,
    pub reference_pressure: f64,
}

impl FluidModel {
    pub fn new(
        reference_density: f64,
        compressibility: Compressibility,
        viscosity: f64,
        reference_pressure: f64,
    ) -> Result<Self> {
        if !(reference_density > 0.0) || !(viscosity > 0.0) {
            return Err(Error::InvalidInput(format!(
                "fluid density and viscosity must be positive, got {reference_density} and {viscosity}"
            )));
        }
        if let Compressibility::BulkModulus(k) = compressibility {
            if !(k > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "fluid bulk modulus must be positive, got {k}"
                )));
            }
        }
        Ok(FluidModel {
            reference_density,
            compressibility,
            viscosity,
            reference_pressure,
        })
    }

    pub fn density(&self, p: f64) -> f64 {
        fluid_density(self, p)
    }

    /// `dρ/dp`.
    pub fn density_derivative(&self) -> f64 {
        self.reference_density * self.compressibility.inverse_modulus()
    }
}

pub fn fluid_density(model: &FluidModel, p: f64) -> f64 {
    match model.compressibility {
        Compressibility::Incompressible => model.reference_density,
        Compressibility::BulkModulus(k) => model.reference_density * (1.0 + (p - model.reference_pressure) / k),
    }
}

/// Mixture density `(1 − φ) ρ_s + φ ρ_w s + φ ρ_o (1 − s)`.
pub fn mixture_density(porosity: f64, s: f64, rho_s: f64, rho_w: f64, rho_o: f64) -> f64 {
    (1.0 - porosity) * rho_s + porosity * rho_w * s + porosity * rho_o * (1.0 - s)
}

/// Backward-Euler porosity increment `b Δ(∇·u) + ((b − φ₀) / K_s) Δp`.
pub fn porosity_increment(solid: &SolidModel, d_volumetric_strain: f64, dp: f64) -> f64 {
    solid.biot * d_volumetric_strain + solid.porosity_pressure_coefficient(solid.reference_porosity) * dp
}

/// Corey-type power-law relative permeabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelPermModel {
    pub residual_wetting: f64,
    pub residual_nonwetting: f64,
    pub exponent: f64,
}

impl Default for RelPermModel {
    fn default() -> Self {
        RelPermModel {
            residual_wetting: 0.0,
            residual_nonwetting: 0.0,
            exponent: 2.0,
        }
    }
}

impl RelPermModel {
    pub fn new(residual_wetting: f64, residual_nonwetting: f64, exponent: f64) -> Result<Self> {
        if residual_wetting < 0.0 || residual_nonwetting < 0.0 || residual_wetting + residual_nonwetting >= 1.0 {
            return Err(Error::InvalidInput(format!(
                "residual saturations {residual_wetting} and {residual_nonwetting} must be \
                 non-negative and sum to less than 1"
            )));
        }
        if !(exponent >= 1.0) {
            return Err(Error::InvalidInput(format!(
                "relative permeability exponent must be at least 1, got {exponent}"
            )));
        }
        Ok(RelPermModel {
            residual_wetting,
            residual_nonwetting,
            exponent,
        })
    }

    fn mobile_range(&self) -> f64 {
        1.0 - self.residual_wetting - self.residual_nonwetting
    }

    /// Effective saturation, clamped to `[0, 1]`.
    pub fn effective_saturation(&self, s: f64) -> f64 {
        ((s - self.residual_wetting) / self.mobile_range()).clamp(0.0, 1.0)
    }

    fn d_effective(&self, s: f64) -> f64 {
        let se = (s - self.residual_wetting) / self.mobile_range();
        if se > 0.0 && se < 1.0 {
            1.0 / self.mobile_range()
        } else {
            0.0
        }
    }

    /// Relative permeability and its derivative with respect to `s`.
    pub fn relperm(&self, phase: Phase, s: f64) -> (f64, f64) {
        let se = self.effective_saturation(s);
        let dse = self.d_effective(s);
        let n = self.exponent;
        match phase {
            Phase::Wetting => {
                let k = libm::pow(se, n);
                let dk = if se > 0.0 {
                    n * libm::pow(se, n - 1.0) * dse
                } else {
                    0.0
                };
                (k, dk)
            }
            Phase::NonWetting => {
                let so = 1.0 - se;
                let k = libm::pow(so, n);
                let dk = if so > 0.0 {
                    -n * libm::pow(so, n - 1.0) * dse
                } else {
                    0.0
                };
                (k, dk)
            }
        }
    }
}

/// Phase mobility `k_rℓ(s) / μ_ℓ`.
pub fn phase_mobility(rp: &RelPermModel, s: f64, viscosity: f64, phase: Phase) -> f64 {
    rp.relperm(phase, s).0 / viscosity
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn lame_examples() {
        let (l, g) = lame_from_young_poisson(2.5, 0.25).unwrap();
        assert!(close(l, 1.0, 1e-14) && close(g, 1.0, 1e-14));
        let (l, g) = lame_from_young_poisson(3.0, 0.0).unwrap();
        assert_eq!(l, 0.0);
        assert!(close(g, 1.5, 1e-15));
        let (l, g) = lame_from_young_poisson(1e5, 0.1).unwrap();
        assert!((l - 11363.636363636364).abs() < 1e-8);
        assert!((g - 45454.545454545456).abs() < 1e-8);
        assert!(lame_from_young_poisson(1.0, 0.5).is_err());
        assert!(lame_from_young_poisson(-1.0, 0.2).is_err());
    }

    #[test]
    fn density_examples() {
        let f = FluidModel::new(1000.0, Compressibility::BulkModulus(1e9), 1e-3, 2e5).unwrap();
        assert_eq!(fluid_density(&f, 2e5), 1000.0);
        assert!(close(fluid_density(&f, 2e5 + 1e6), 1001.0, 1e-14));
        let inc = FluidModel::new(1000.0, Compressibility::Incompressible, 1e-3, 0.0).unwrap();
        assert_eq!(fluid_density(&inc, 1e9), 1000.0);
        assert_eq!(inc.density_derivative(), 0.0);
    }

    #[test]
    fn mixture_examples() {
        assert_eq!(mixture_density(0.0, 0.3, 2650.0, 1035.0, 863.0), 2650.0);
        assert!(close(mixture_density(0.2, 1.0, 2650.0, 1035.0, 863.0), 2327.0, 1e-14));
        assert_eq!(mixture_density(1.0, 0.0, 2650.0, 1035.0, 863.0), 863.0);
    }

    #[test]
    fn porosity_examples() {
        let rigid = SolidModel::new(1e9, 0.25, Compressibility::Incompressible, 2650.0, 0.2).unwrap();
        assert_eq!(rigid.biot, 1.0);
        assert_eq!(porosity_increment(&rigid, 0.0, 5e6), 0.0);
        assert_eq!(porosity_increment(&rigid, 3e-4, 5e6), 3e-4);

        // b = 0.8, φ₀ = 0.2, K_s = 1e10: choose E, ν so that K = 0.2 K_s = 2e9.
        let (e, nu) = (3.0 * 2e9 * (1.0 - 2.0 * 0.25), 0.25);
        let s = SolidModel::new(e, nu, Compressibility::BulkModulus(1e10), 2650.0, 0.2).unwrap();
        assert!(close(s.biot, 0.8, 1e-12));
        assert!(close(porosity_increment(&s, 1e-4, 1e6), 1.4e-4, 1e-10));
    }

    #[test]
    fn mobility_examples() {
        let rp = RelPermModel::new(0.2, 0.2, 2.0).unwrap();
        assert_eq!(phase_mobility(&rp, 0.2, 3e-4, Phase::Wetting), 0.0);
        assert!(close(phase_mobility(&rp, 0.8, 3e-4, Phase::Wetting), 1.0 / 3e-4, 1e-14));
        let lw = phase_mobility(&rp, 0.6, 0.3e-3, Phase::Wetting);
        assert!(close(rp.effective_saturation(0.6), 2.0 / 3.0, 1e-14));
        assert!(close(lw, (4.0 / 9.0) / 0.3e-3, 1e-12));
        assert!((lw - 1481.48).abs() < 0.01);
        assert!(RelPermModel::new(0.6, 0.4, 2.0).is_err());
    }

    proptest! {
        #[test]
        fn relperm_monotone_and_bounded(a in 0.0f64..1.0, b in 0.0f64..1.0,
                                        swr in 0.0f64..0.4, sor in 0.0f64..0.4, n in 1.0f64..4.0) {
            let rp = RelPermModel::new(swr, sor, n).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let (kw_lo, _) = rp.relperm(Phase::Wetting, lo);
            let (kw_hi, _) = rp.relperm(Phase::Wetting, hi);
            let (ko_lo, _) = rp.relperm(Phase::NonWetting, lo);
            let (ko_hi, _) = rp.relperm(Phase::NonWetting, hi);
            prop_assert!(kw_lo <= kw_hi && ko_lo >= ko_hi);
            for k in [kw_lo, kw_hi, ko_lo, ko_hi] {
                prop_assert!((0.0..=1.0).contains(&k));
            }
        }

        #[test]
        fn relperm_derivative_matches_differences(s in 0.01f64..0.99, n in 1.0f64..4.0) {
            let rp = RelPermModel::new(0.1, 0.15, n).unwrap();
            let h = 1e-7;
            for phase in [Phase::Wetting, Phase::NonWetting] {
                let se = rp.effective_saturation(s);
                prop_assume!(se > 1e-3 && se < 1.0 - 1e-3);
                let fd = (rp.relperm(phase, s + h).0 - rp.relperm(phase, s - h).0) / (2.0 * h);
                let d = rp.relperm(phase, s).1;
                prop_assert!((fd - d).abs() <= 1e-5 * d.abs().max(1.0));
            }
        }

        #[test]
        fn density_affine_in_pressure(p1 in -1e7f64..1e7, p2 in -1e7f64..1e7, k in 1e8f64..1e10) {
            let f = FluidModel::new(1000.0, Compressibility::BulkModulus(k), 1e-3, 0.0).unwrap();
            let mid = fluid_density(&f, 0.5 * (p1 + p2));
            let avg = 0.5 * (fluid_density(&f, p1) + fluid_density(&f, p2));
            prop_assert!((mid - avg).abs() <= 1e-12 * mid);
        }

        #[test]
        fn biot_below_one_for_finite_grains(e in 1e6f64..1e10, nu in 0.0f64..0.45, factor in 1.5f64..100.0) {
            let (l, g) = lame_from_young_poisson(e, nu).unwrap();
            let k = l + 2.0 * g / 3.0;
            let s = SolidModel::new(e, nu, Compressibility::BulkModulus(factor * k), 2650.0, 0.1).unwrap();
            prop_assert!(s.biot < 1.0 && s.biot > 0.0);
        }
    }
}
