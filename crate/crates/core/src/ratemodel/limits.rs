//! Rates from asymptotic g² parameters, and the absorption cross section.

use serde::{Deserialize, Serialize};

use super::{four_level_shelving_rate, PhotophysicsLimits, RateCoefficients};
use crate::error::{Error, Result};

const PLANCK: f64 = 6.626_070_15e-34;
const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Photon energy in joule at a vacuum wavelength in nm.
pub fn photon_energy_joule(wavelength_nm: f64) -> f64 {
    PLANCK * SPEED_OF_LIGHT / (wavelength_nm * 1e-9)
}

/// Rates of the three-level model without the pump rate, ns⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeLevelRates {
    pub k_eg: f64,
    pub k_es: f64,
    pub k_sg: f64,
}

impl ThreeLevelRates {
    pub fn with_pump(&self, k_ge: f64) -> Result<RateCoefficients> {
        RateCoefficients::new(k_ge, self.k_eg, self.k_es, self.k_sg)
    }

    pub fn cross_section(&self, i0_sat: f64, wavelength_nm: f64) -> Result<f64> {
        cross_section(self.k_eg, self.k_es, self.k_sg, i0_sat, wavelength_nm)
    }

    /// Asymptotic limits implied by these rates (the inverse of
    /// [`rates_from_limits_3level`]).
    pub fn limits(&self) -> PhotophysicsLimits {
        PhotophysicsLimits::three_level(
            1.0 / (self.k_eg + self.k_es),
            1.0 / (self.k_sg + self.k_es),
            self.k_es / self.k_sg,
        )
    }
}

/// Rates of the four-level model, ns⁻¹.
///
/// `k_sg_inf` is the high-intensity shelving rate `1/τ₂^∞`; the
/// generator itself saturates at `k_sg⁰ + d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourLevelRates {
    pub k_eg: f64,
    pub k_es: f64,
    pub k_sg0: f64,
    pub k_sg_inf: f64,
    pub d: f64,
}

impl FourLevelRates {
    /// Rate set at pump rate `k_ge` and laser intensity `intensity`.
    pub fn at_intensity(&self, k_ge: f64, intensity: f64, i0_sat: f64) -> Result<RateCoefficients> {
        let k_sg = four_level_shelving_rate(self.k_sg0, self.d, intensity, i0_sat);
        RateCoefficients::new(k_ge, self.k_eg, self.k_es, k_sg)
    }

    /// Cross section evaluated with `k_sg^∞`.
    pub fn cross_section(&self, i0_sat: f64, wavelength_nm: f64) -> Result<f64> {
        cross_section(self.k_eg, self.k_es, self.k_sg_inf, i0_sat, wavelength_nm)
    }
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

/// Three-level rates from `(τ₁⁰, τ₂^∞, c^∞)`:
///
/// ```text
/// k_sg = 1/((1 + c^∞)·τ₂^∞)
/// k_es = k_sg·c^∞
/// k_eg = 1/τ₁⁰ − k_es
/// ```
pub fn rates_from_limits_3level(limits: &PhotophysicsLimits) -> Result<ThreeLevelRates> {
    require_positive("tau1_0", limits.tau1_0)?;
    require_positive("tau2_inf", limits.tau2_inf)?;
    if !(limits.c_inf.is_finite() && limits.c_inf >= 0.0) {
        return Err(Error::domain(format!(
            "c_inf must be nonnegative, got {}",
            limits.c_inf
        )));
    }
    let k_sg = 1.0 / ((1.0 + limits.c_inf) * limits.tau2_inf);
    let k_es = k_sg * limits.c_inf;
    let k_eg = 1.0 / limits.tau1_0 - k_es;
    if k_eg <= 0.0 {
        return Err(Error::InconsistentLimits(format!(
            "k_eg = 1/tau1_0 - k_es = {k_eg:e} <= 0"
        )));
    }
    if k_eg + k_es <= k_sg {
        return Err(Error::InconsistentLimits(format!(
            "k_eg + k_es = {:e} does not exceed k_sg = {k_sg:e}",
            k_eg + k_es
        )));
    }
    Ok(ThreeLevelRates { k_eg, k_es, k_sg })
}

/// Four-level rates from `(τ₁⁰, τ₂⁰, τ₂^∞, c^∞)`:
///
/// ```text
/// d      = (1/τ₂^∞ − (1 + c^∞)/τ₂⁰)/(1 + c^∞)
/// k_sg⁰  = 1/τ₂⁰,  k_sg^∞ = 1/τ₂^∞
/// k_es   = 1/τ₂^∞ − k_sg⁰ − d
/// k_eg   = 1/τ₁⁰ − k_es
/// ```
pub fn rates_from_limits_4level(limits: &PhotophysicsLimits) -> Result<FourLevelRates> {
    let tau2_0 = limits
        .tau2_0
        .ok_or_else(|| Error::Configuration("four-level extraction requires tau2_0".into()))?;
    require_positive("tau1_0", limits.tau1_0)?;
    require_positive("tau2_0", tau2_0)?;
    require_positive("tau2_inf", limits.tau2_inf)?;
    require_positive("c_inf", limits.c_inf)?;
    let one_c = 1.0 + limits.c_inf;
    let d = (1.0 / limits.tau2_inf - one_c / tau2_0) / one_c;
    let k_sg0 = 1.0 / tau2_0;
    let k_sg_inf = 1.0 / limits.tau2_inf;
    let k_es = k_sg_inf - k_sg0 - d;
    let k_eg = 1.0 / limits.tau1_0 - k_es;
    if d < 0.0 {
        return Err(Error::InconsistentLimits(format!(
            "deshelving amplitude d = {d:e} < 0"
        )));
    }
    if k_es <= 0.0 {
        return Err(Error::InconsistentLimits(format!("k_es = {k_es:e} <= 0")));
    }
    if k_eg <= 0.0 {
        return Err(Error::InconsistentLimits(format!("k_eg = {k_eg:e} <= 0")));
    }
    Ok(FourLevelRates {
        k_eg,
        k_es,
        k_sg0,
        k_sg_inf,
        d,
    })
}

/// Absorption cross section in cm²:
/// `σ = k_sg(k_eg + k_es)/(k_sg + k_es) · hν/I₀`, with rates in ns⁻¹ and
/// `I₀` in kW/cm².
pub fn cross_section(
    k_eg: f64,
    k_es: f64,
    k_sg: f64,
    i0_sat: f64,
    wavelength_nm: f64,
) -> Result<f64> {
    require_positive("I0_sat", i0_sat)?;
    require_positive("wavelength", wavelength_nm)?;
    require_positive("k_eg", k_eg)?;
    require_positive("k_sg", k_sg)?;
    if !(k_es >= 0.0) {
        return Err(Error::domain(format!(
            "k_es must be nonnegative, got {k_es}"
        )));
    }
    let pump_at_saturation = k_sg * (k_eg + k_es) / (k_sg + k_es) * 1e9; // s⁻¹
    let photon_flux_per_intensity = photon_energy_joule(wavelength_nm) / (i0_sat * 1e3); // cm²·s
    Ok(pump_at_saturation * photon_flux_per_intensity)
}

/// Pump rate per unit intensity, ns⁻¹ per kW/cm², for a cross section in cm².
pub fn pump_coefficient(sigma_cm2: f64, wavelength_nm: f64) -> f64 {
    sigma_cm2 * 1e3 / photon_energy_joule(wavelength_nm) * 1e-9
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratemodel::{eigensystem, g2_parameters};
    use approx::assert_relative_eq;

    #[test]
    fn table_one_three_level() {
        let r = rates_from_limits_3level(&PhotophysicsLimits::three_level(7.5, 17.2, 6.0)).unwrap();
        assert!((1.0 / r.k_eg - 12.0).abs() < 0.24, "{}", 1.0 / r.k_eg);
        assert!((1.0 / r.k_es - 20.0).abs() < 0.4, "{}", 1.0 / r.k_es);
        assert!((1.0 / r.k_sg - 120.0).abs() < 2.4, "{}", 1.0 / r.k_sg);
    }

    #[test]
    fn zero_bunching_means_no_isc() {
        let r = rates_from_limits_3level(&PhotophysicsLimits::three_level(7.5, 17.2, 0.0)).unwrap();
        assert_eq!(r.k_es, 0.0);
        assert_relative_eq!(r.k_eg, 1.0 / 7.5);
    }

    #[test]
    fn inconsistent_three_level_limits() {
        // k_es = 6/(7·1) exceeds 1/τ₁⁰ = 0.1
        let err = rates_from_limits_3level(&PhotophysicsLimits::three_level(10.0, 1.0, 6.0));
        assert!(matches!(err, Err(Error::InconsistentLimits(_))));
    }

    #[test]
    fn table_one_four_level() {
        let r = rates_from_limits_4level(&PhotophysicsLimits::four_level(6.7, 204.4, 14.9, 6.3))
            .unwrap();
        assert!((1.0 / r.k_eg - 11.0).abs() < 0.55);
        assert!((1.0 / r.k_es - 17.0).abs() < 0.85);
        assert!((1.0 / r.k_sg0 - 204.0).abs() < 10.2);
        assert!((1.0 / r.k_sg_inf - 15.0).abs() < 0.75);
        // d recomputed by hand from the same limits: 1/d ≈ 232 ns
        assert!((1.0 / r.d - 232.0).abs() < 1.0, "1/d = {}", 1.0 / r.d);
    }

    #[test]
    fn four_level_reduces_to_three_level_for_long_tau2_0() {
        let c = 6.0;
        let t2 = 17.2;
        let r =
            rates_from_limits_4level(&PhotophysicsLimits::four_level(7.5, 1e12, t2, c)).unwrap();
        assert_relative_eq!(r.d, 1.0 / ((1.0 + c) * t2), max_relative = 1e-9);
    }

    #[test]
    fn four_level_needs_tau2_0() {
        let err = rates_from_limits_4level(&PhotophysicsLimits::three_level(6.7, 14.9, 6.3));
        assert!(matches!(err, Err(Error::Configuration(_))));
    }

    #[test]
    fn negative_deshelving_is_inconsistent() {
        // (1+c)/τ₂⁰ > 1/τ₂^∞
        let err = rates_from_limits_4level(&PhotophysicsLimits::four_level(6.7, 20.0, 14.9, 6.3));
        assert!(matches!(err, Err(Error::InconsistentLimits(_))));
    }

    #[test]
    fn cross_sections_of_table_one() {
        let r3 =
            rates_from_limits_3level(&PhotophysicsLimits::three_level(7.5, 17.2, 6.0)).unwrap();
        let s3 = r3.cross_section(44.0, 785.0).unwrap();
        assert!((s3 - 1.1e-16).abs() < 0.1e-16, "{s3:e}");
        let r4 = rates_from_limits_4level(&PhotophysicsLimits::four_level(6.7, 204.4, 14.9, 6.3))
            .unwrap();
        let s4 = r4.cross_section(44.0, 785.0).unwrap();
        assert!((s4 - 4.9e-16).abs() < 1.2e-16, "{s4:e}");
    }

    #[test]
    fn cross_section_without_isc() {
        let s = cross_section(0.1, 0.0, 0.01, 44.0, 785.0).unwrap();
        let expected = 0.1e9 * photon_energy_joule(785.0) / 44e3;
        assert_relative_eq!(s, expected, max_relative = 1e-14);
    }

    #[test]
    fn pump_coefficient_inverts_cross_section() {
        // σ = κ·hν: the saturation pump rate over I₀
        let r3 = ThreeLevelRates {
            k_eg: 1.0 / 12.0,
            k_es: 1.0 / 20.0,
            k_sg: 1.0 / 120.0,
        };
        let sigma = r3.cross_section(44.0, 785.0).unwrap();
        let kappa = pump_coefficient(sigma, 785.0);
        let k_sat = r3.k_sg * (r3.k_eg + r3.k_es) / (r3.k_sg + r3.k_es);
        assert_relative_eq!(kappa * 44.0, k_sat, max_relative = 1e-12);
    }

    /// Limits read off the eigensystem at extreme pump rates.
    fn numeric_limits(r: &ThreeLevelRates) -> PhotophysicsLimits {
        let tau1_0 = eigensystem(&r.with_pump(1e-9).unwrap()).unwrap().tau1;
        let (_, tau2_inf, c_inf) = g2_parameters(&r.with_pump(1e9).unwrap()).unwrap();
        PhotophysicsLimits::three_level(tau1_0, tau2_inf, c_inf)
    }

    #[test]
    fn three_level_round_trip_through_eigensystem() {
        for r in [
            ThreeLevelRates {
                k_eg: 1.0 / 12.0,
                k_es: 1.0 / 20.0,
                k_sg: 1.0 / 120.0,
            },
            ThreeLevelRates {
                k_eg: 0.2,
                k_es: 0.01,
                k_sg: 0.003,
            },
            ThreeLevelRates {
                k_eg: 0.05,
                k_es: 0.08,
                k_sg: 0.02,
            },
        ] {
            let back = rates_from_limits_3level(&numeric_limits(&r)).unwrap();
            assert_relative_eq!(back.k_eg, r.k_eg, max_relative = 1e-8);
            assert_relative_eq!(back.k_es, r.k_es, max_relative = 1e-8);
            assert_relative_eq!(back.k_sg, r.k_sg, max_relative = 1e-8);
        }
    }

    #[test]
    fn four_level_round_trip_through_eigensystem() {
        let truth = FourLevelRates {
            k_eg: 0.09,
            k_es: 0.058,
            k_sg0: 1.0 / 200.0,
            k_sg_inf: f64::NAN,
            d: 0.0043,
        };
        let i0 = 44.0;
        let at = |k_ge: f64, intensity: f64| {
            g2_parameters(&truth.at_intensity(k_ge, intensity, i0).unwrap()).unwrap()
        };
        let (tau1_0, tau2_0, _) = at(1e-12, 1e-12);
        let (_, tau2_inf, c_inf) = at(1e9, 1e12);
        let back = rates_from_limits_4level(&PhotophysicsLimits::four_level(
            tau1_0, tau2_0, tau2_inf, c_inf,
        ))
        .unwrap();
        assert_relative_eq!(back.k_eg, truth.k_eg, max_relative = 1e-6);
        assert_relative_eq!(back.k_es, truth.k_es, max_relative = 1e-6);
        assert_relative_eq!(back.k_sg0, truth.k_sg0, max_relative = 1e-6);
        assert_relative_eq!(back.d, truth.d, max_relative = 1e-6);
    }
}
