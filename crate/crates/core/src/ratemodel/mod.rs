//! Electronic rate model of an optically pumped color center.
//!
//! Three electronic levels are tracked: the ground state `G`, the optically
//! excited state `E` and a metastable shelving state `S`. Population vectors
//! are always ordered `(n_g, n_e, n_s)` and all rates are in ns⁻¹.
//!
//! The four-level model differs only through an intensity dependent
//! shelving decay `k_sg(I) = d·I/(I + I₀) + k_sg⁰` (re-excitation out of the
//! shelf), so both share the same 3×3 generator.

mod limits;
mod stochastic;

pub use limits::{
    cross_section, photon_energy_joule, pump_coefficient, rates_from_limits_3level,
    rates_from_limits_4level, FourLevelRates, ThreeLevelRates,
};
pub use stochastic::{
    simulate_photon_stream, PhotonStream, SimulationStats, StreamConfig, StreamSimulator,
};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kinetic rates of the level scheme, ns⁻¹.
///
/// `k_es = 0` is accepted and describes a pure two-level emitter; every
/// other rate must be strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateCoefficients {
    pub k_ge: f64,
    pub k_eg: f64,
    pub k_es: f64,
    pub k_sg: f64,
}

impl RateCoefficients {
    pub fn new(k_ge: f64, k_eg: f64, k_es: f64, k_sg: f64) -> Result<Self> {
        let rc = Self {
            k_ge,
            k_eg,
            k_es,
            k_sg,
        };
        rc.validate()?;
        Ok(rc)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k_ge", self.k_ge),
            ("k_eg", self.k_eg),
            ("k_sg", self.k_sg),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.k_es.is_finite() && self.k_es >= 0.0) {
            return Err(Error::domain(format!(
                "k_es must be nonnegative and finite, got {}",
                self.k_es
            )));
        }
        Ok(())
    }

    /// Same rates with a different pump rate.
    pub fn with_pump(&self, k_ge: f64) -> Result<Self> {
        Self::new(k_ge, self.k_eg, self.k_es, self.k_sg)
    }

    /// `(k_eg + k_es) > k_sg`, required for the asymptotic rate extraction
    /// to assign the fast and slow decay constants unambiguously.
    pub fn extraction_condition_holds(&self) -> bool {
        self.k_eg + self.k_es > self.k_sg
    }

    /// `A = k_ge + k_eg + k_es + k_sg`
    pub fn trace_sum(&self) -> f64 {
        self.k_ge + self.k_eg + self.k_es + self.k_sg
    }

    /// `B = k_sg(k_eg + k_es + k_ge) + k_es·k_ge`
    pub fn determinant_sum(&self) -> f64 {
        self.k_sg * (self.k_eg + self.k_es + self.k_ge) + self.k_es * self.k_ge
    }
}

/// Which electronic model the generator is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelModel {
    ThreeLevel,
    FourLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelPopulations {
    pub n_g: f64,
    pub n_e: f64,
    pub n_s: f64,
}

impl LevelPopulations {
    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.n_g, self.n_e, self.n_s)
    }

    pub fn total(&self) -> f64 {
        self.n_g + self.n_e + self.n_s
    }
}

/// Asymptotic parameters of the intensity series, bridging per-curve g²
/// fits and rate extraction. Times in ns, `d` in ns⁻¹, `i0_sat` in kW/cm².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotophysicsLimits {
    /// Antibunching time at vanishing intensity.
    pub tau1_0: f64,
    /// Bunching time at vanishing intensity (four-level only).
    pub tau2_0: Option<f64>,
    /// Bunching time at saturating intensity.
    pub tau2_inf: f64,
    /// Bunching amplitude at saturating intensity.
    pub c_inf: f64,
    /// Deshelving amplitude (four-level only).
    pub d: Option<f64>,
    pub i0_sat: Option<f64>,
}

impl PhotophysicsLimits {
    pub fn three_level(tau1_0: f64, tau2_inf: f64, c_inf: f64) -> Self {
        Self {
            tau1_0,
            tau2_0: None,
            tau2_inf,
            c_inf,
            d: None,
            i0_sat: None,
        }
    }

    pub fn four_level(tau1_0: f64, tau2_0: f64, tau2_inf: f64, c_inf: f64) -> Self {
        Self {
            tau1_0,
            tau2_0: Some(tau2_0),
            tau2_inf,
            c_inf,
            d: None,
            i0_sat: None,
        }
    }

    pub fn with_saturation(mut self, d: f64, i0_sat: f64) -> Self {
        self.d = Some(d);
        self.i0_sat = Some(i0_sat);
        self
    }
}

/// Decay constants and modes of the rate generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenSystem {
    /// `[0, λ₁, λ₂]` with `λ₁ ≥ λ₂ > 0`; the generator eigenvalues are `−λ`.
    pub lambda: [f64; 3],
    /// `1/λ₁`, the antibunching time.
    pub tau1: f64,
    /// `1/λ₂`, the bunching time.
    pub tau2: f64,
    pub a: f64,
    pub b: f64,
    /// Eigenvectors in `(g, e, s)` order, one per entry of `lambda`.
    pub eigvecs: [[f64; 3]; 3],
}

/// Shelving decay of the four-level model at a given intensity.
pub fn four_level_shelving_rate(k_sg0: f64, d: f64, intensity: f64, i0_sat: f64) -> f64 {
    d * intensity / (intensity + i0_sat) + k_sg0
}

/// Rates actually entering the generator.
///
/// For the three-level model this is `rc` itself. For the four-level model
/// `rc.k_sg` is read as the low-intensity value `k_sg⁰` and replaced by
/// `k_sg(I)`, with `d` and `I₀` taken from `limits`.
pub fn effective_rates(
    rc: &RateCoefficients,
    model: LevelModel,
    intensity: f64,
    limits: Option<&PhotophysicsLimits>,
) -> Result<RateCoefficients> {
    rc.validate()?;
    match model {
        LevelModel::ThreeLevel => Ok(*rc),
        LevelModel::FourLevel => {
            let lim = limits.ok_or_else(|| {
                Error::Configuration("four-level generator requires photophysics limits".into())
            })?;
            let (d, i0) = match (lim.d, lim.i0_sat) {
                (Some(d), Some(i0)) => (d, i0),
                _ => {
                    return Err(Error::Configuration(
                        "four-level generator requires d and I0_sat".into(),
                    ))
                }
            };
            if !(d >= 0.0 && i0 > 0.0) {
                return Err(Error::domain(format!(
                    "need d >= 0 and I0 > 0, got d={d}, I0={i0}"
                )));
            }
            if !(intensity >= 0.0 && intensity.is_finite()) {
                return Err(Error::domain(format!(
                    "intensity must be nonnegative, got {intensity}"
                )));
            }
            Ok(RateCoefficients {
                k_sg: four_level_shelving_rate(rc.k_sg, d, intensity, i0),
                ..*rc
            })
        }
    }
}

/// Generator `Q` of `dn/dt = Q·n`; columns sum to zero.
pub fn build_generator(
    rc: &RateCoefficients,
    model: LevelModel,
    intensity: f64,
    limits: Option<&PhotophysicsLimits>,
) -> Result<Matrix3<f64>> {
    let r = effective_rates(rc, model, intensity, limits)?;
    Ok(generator_matrix(&r))
}

pub(crate) fn generator_matrix(r: &RateCoefficients) -> Matrix3<f64> {
    #[rustfmt::skip]
    let q = Matrix3::new(
        -r.k_ge,  r.k_eg,             r.k_sg,
         r.k_ge, -r.k_eg - r.k_es,    0.0,
         0.0,     r.k_es,            -r.k_sg,
    );
    q
}

/// Closed-form eigen-decomposition of the three-level generator.
pub fn eigensystem(rc: &RateCoefficients) -> Result<EigenSystem> {
    rc.validate()?;
    let a = rc.trace_sum();
    let b = rc.determinant_sum();
    let disc = a * a - 4.0 * b;
    if disc < 0.0 {
        return Err(Error::Oscillatory { discriminant: disc });
    }
    let h = disc.sqrt();
    let lambda1 = 0.5 * (a + h);
    // (A − √(A²−4B))/2 rewritten without cancellation
    let lambda2 = 2.0 * b / (a + h);
    let eigvecs = closed_form_eigenvectors(rc, h, [lambda1, lambda2]);
    Ok(EigenSystem {
        lambda: [0.0, lambda1, lambda2],
        tau1: 1.0 / lambda1,
        tau2: 1.0 / lambda2,
        a,
        b,
        eigvecs,
    })
}

/// Eigenvectors in `(g, e, s)` order.
///
/// The usual closed forms are written with the component order reversed
/// (`(s, e, g)`); they are reordered here. The slow mode uses the same
/// expressions with the sign of `H = √(A² − 4B)` flipped, which is what the
/// eigen-relation requires. With `k_es = 0` the closed forms divide by zero
/// and a null-vector construction from the rows of `Q + λ` is used instead.
fn closed_form_eigenvectors(rc: &RateCoefficients, h: f64, lambdas: [f64; 2]) -> [[f64; 3]; 3] {
    let st = stationary_vector(rc);
    let mut out = [st, [0.0; 3], [0.0; 3]];
    if rc.k_es > 0.0 {
        for (slot, sign) in [(1usize, 1.0), (2usize, -1.0)] {
            let g = (sign * h + rc.k_eg + rc.k_es + rc.k_ge - rc.k_sg) / (2.0 * rc.k_es);
            let f = g - 1.0;
            out[slot] = normalized([-f, g, -1.0]);
        }
    } else {
        let q = generator_matrix(rc);
        for (slot, lam) in [(1usize, lambdas[0]), (2usize, lambdas[1])] {
            out[slot] = normalized(null_vector(&(q + Matrix3::identity() * lam)));
        }
    }
    out
}

fn normalized(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Null vector of a rank-2 3×3 matrix: the largest cross product of two rows.
fn null_vector(m: &Matrix3<f64>) -> [f64; 3] {
    let rows = [
        m.row(0).transpose(),
        m.row(1).transpose(),
        m.row(2).transpose(),
    ];
    let mut best = Vector3::zeros();
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let c = rows[i].cross(&rows[j]);
        if c.norm() > best.norm() {
            best = c;
        }
    }
    [best[0], best[1], best[2]]
}

fn stationary_vector(rc: &RateCoefficients) -> [f64; 3] {
    let b = rc.determinant_sum();
    [
        rc.k_sg * (rc.k_eg + rc.k_es) / b,
        rc.k_ge * rc.k_sg / b,
        rc.k_es * rc.k_ge / b,
    ]
}

/// Stationary populations of the generator.
pub fn stationary_state(rc: &RateCoefficients) -> Result<LevelPopulations> {
    rc.validate()?;
    let [n_g, n_e, n_s] = stationary_vector(rc);
    Ok(LevelPopulations { n_g, n_e, n_s })
}

/// `g²(τ) = 1 − (1+c)·e^{−|τ|/τ₁} + c·e^{−|τ|/τ₂}`.
pub fn g2_analytic(tau1: f64, tau2: f64, c: f64, tau: f64) -> f64 {
    let t = tau.abs();
    1.0 - (1.0 + c) * (-t / tau1).exp() + c * (-t / tau2).exp()
}

/// Bunching amplitude `c = (1 − τ₂k_sg)/(k_sg(τ₂ − τ₁))`.
pub fn bunching_amplitude(rc: &RateCoefficients) -> Result<f64> {
    let es = eigensystem(rc)?;
    bunching_from_eigensystem(rc, &es)
}

pub(crate) fn bunching_from_eigensystem(rc: &RateCoefficients, es: &EigenSystem) -> Result<f64> {
    let gap = es.tau2 - es.tau1;
    if gap.abs() <= 1e-12 * es.tau2 {
        return Err(Error::Degenerate(es.tau1));
    }
    Ok((1.0 - es.tau2 * rc.k_sg) / (rc.k_sg * gap))
}

/// `(τ₁, τ₂, c)` of the g² curve produced by a rate set.
pub fn g2_parameters(rc: &RateCoefficients) -> Result<(f64, f64, f64)> {
    let es = eigensystem(rc)?;
    let c = bunching_from_eigensystem(rc, &es)?;
    Ok((es.tau1, es.tau2, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;
    use proptest::prelude::*;

    pub(crate) fn table_one(k_ge: f64) -> RateCoefficients {
        RateCoefficients::new(k_ge, 1.0 / 12.0, 1.0 / 20.0, 1.0 / 120.0).unwrap()
    }

    /// Eigenvalues of a real 3×3 matrix from nalgebra's Schur-based solver.
    fn numeric_decay_constants(q: &Matrix3<f64>) -> Vec<f64> {
        let mut ev: Vec<f64> = q
            .complex_eigenvalues()
            .iter()
            .map(|z| {
                assert!(z.im.abs() < 1e-12, "unexpected complex eigenvalue {z}");
                -z.re
            })
            .collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    /// `n_e(t)/n_e^st` from the matrix exponential, starting in the ground state.
    fn g2_expm(rc: &RateCoefficients, t: f64) -> f64 {
        let q = generator_matrix(rc);
        let n = (q * t).exp() * Vector3::new(1.0, 0.0, 0.0);
        n[1] / stationary_state(rc).unwrap().n_e
    }

    #[test]
    fn generator_columns_sum_to_zero() {
        let q = build_generator(&table_one(0.05), LevelModel::ThreeLevel, 0.0, None).unwrap();
        for j in 0..3 {
            assert!(q.column(j).sum().abs() < 1e-16);
        }
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(q[(i, j)] >= 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_isc_decouples_the_shelf() {
        let rc = RateCoefficients::new(0.05, 0.1, 0.0, 0.01).unwrap();
        let q = generator_matrix(&rc);
        assert_eq!(q[(2, 1)], 0.0);
        assert_eq!(q[(2, 0)], 0.0);
        let es = eigensystem(&rc).unwrap();
        assert_relative_eq!(es.lambda[1], 0.15, max_relative = 1e-12);
        assert_relative_eq!(es.lambda[2], 0.01, max_relative = 1e-12);
        let st = stationary_state(&rc).unwrap();
        assert_eq!(st.n_s, 0.0);
        assert!(bunching_amplitude(&rc).unwrap().abs() < 1e-12);
    }

    #[test]
    fn four_level_without_limits_is_a_configuration_error() {
        let err = build_generator(&table_one(0.05), LevelModel::FourLevel, 10.0, None);
        assert!(matches!(err, Err(Error::Configuration(_))));
    }

    #[test]
    fn four_level_generator_uses_intensity_dependent_shelving() {
        let lim =
            PhotophysicsLimits::four_level(6.7, 204.4, 14.9, 6.3).with_saturation(0.004, 44.0);
        let rc = table_one(0.05);
        let q = build_generator(&rc, LevelModel::FourLevel, 44.0, Some(&lim)).unwrap();
        assert_relative_eq!(q[(0, 2)], rc.k_sg + 0.002, max_relative = 1e-14);
        assert_relative_eq!(q.column(2).sum(), 0.0, epsilon = 1e-16);
    }

    #[test]
    fn nonpositive_rates_are_rejected() {
        assert!(RateCoefficients::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(RateCoefficients::new(1.0, -1.0, 1.0, 1.0).is_err());
        assert!(RateCoefficients::new(1.0, 1.0, f64::NAN, 1.0).is_err());
        assert!(RateCoefficients::new(1.0, 1.0, 1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn table_one_eigenvalues_match_numeric_solver() {
        let rc = table_one(0.05);
        let es = eigensystem(&rc).unwrap();
        let num = numeric_decay_constants(&generator_matrix(&rc));
        assert!(num[0].abs() < 1e-14);
        assert_relative_eq!(num[1], es.lambda[2], max_relative = 1e-10);
        assert_relative_eq!(num[2], es.lambda[1], max_relative = 1e-10);
    }

    #[test]
    fn low_pump_antibunching_time_is_radiative_plus_isc_lifetime() {
        let es = eigensystem(&table_one(1e-9)).unwrap();
        assert_relative_eq!(es.tau1, 7.5, max_relative = 1e-7);
    }

    #[test]
    fn closed_form_eigenvectors_satisfy_eigen_relation() {
        for rc in [table_one(0.05), table_one(1e-3), table_one(5.0)] {
            let es = eigensystem(&rc).unwrap();
            let q = generator_matrix(&rc);
            for (k, v) in es.eigvecs.iter().enumerate() {
                let v = Vector3::from(*v);
                let lhs = q * v;
                let rhs = -es.lambda[k] * v;
                let scale = q.norm() * v.norm();
                assert!(
                    (lhs - rhs).norm() <= 1e-10 * scale,
                    "mode {k}: {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn zero_mode_is_the_stationary_state() {
        let rc = table_one(0.05);
        let es = eigensystem(&rc).unwrap();
        let st = stationary_state(&rc).unwrap();
        let v = es.eigvecs[0];
        let s = v[0] + v[1] + v[2];
        assert_relative_eq!(v[0] / s, st.n_g, max_relative = 1e-12);
        assert_relative_eq!(v[1] / s, st.n_e, max_relative = 1e-12);
        assert_relative_eq!(v[2] / s, st.n_s, max_relative = 1e-12);
    }

    #[test]
    fn stationary_state_is_the_normalized_null_space() {
        let rc = table_one(0.05);
        let st = stationary_state(&rc).unwrap();
        // null space from SVD of the generator, independent of the closed form
        let svd = generator_matrix(&rc).svd(true, true);
        let (idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let v = svd.v_t.unwrap().row(idx).transpose();
        let v = v / v.sum();
        assert_relative_eq!(st.n_g, v[0], max_relative = 1e-10);
        assert_relative_eq!(st.n_e, v[1], max_relative = 1e-10);
        assert_relative_eq!(st.n_s, v[2], max_relative = 1e-10);
        assert_relative_eq!(st.total(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn vanishing_isc_empties_the_shelf() {
        let rc = RateCoefficients::new(0.05, 1.0 / 12.0, 1e-12, 1.0 / 120.0).unwrap();
        assert!(stationary_state(&rc).unwrap().n_s < 1e-9);
    }

    #[test]
    fn g2_limits() {
        assert_eq!(g2_analytic(7.5, 100.0, 3.0, 0.0), 0.0);
        assert_relative_eq!(g2_analytic(7.5, 100.0, 3.0, 1e5), 1.0, epsilon = 1e-12);
        assert_eq!(
            g2_analytic(7.5, 100.0, 3.0, 4.0),
            g2_analytic(7.5, 100.0, 3.0, -4.0)
        );
    }

    #[test]
    fn g2_matches_matrix_exponential_for_table_one() {
        let rc = table_one(0.05);
        let (t1, t2, c) = g2_parameters(&rc).unwrap();
        assert_relative_eq!(
            g2_analytic(t1, t2, c, 5.0),
            g2_expm(&rc, 5.0),
            epsilon = 1e-9
        );
    }

    #[test]
    fn bunching_vanishes_without_isc() {
        let rc = RateCoefficients::new(0.05, 1.0 / 12.0, 1e-10, 1.0 / 120.0).unwrap();
        assert!(bunching_amplitude(&rc).unwrap().abs() < 1e-7);
    }

    #[test]
    fn saturated_bunching_reaches_isc_to_shelf_ratio() {
        let c = bunching_amplitude(&table_one(1e6)).unwrap();
        assert!((c - 6.0).abs() < 0.5, "c = {c}");
    }

    #[test]
    fn degenerate_decay_constants_error() {
        // A² = 4B with k_es = 0: λ₁ = k_ge + k_eg equals λ₂ = k_sg
        let rc = RateCoefficients::new(0.5, 0.5, 0.0, 1.0).unwrap();
        assert!(matches!(bunching_amplitude(&rc), Err(Error::Degenerate(_))));
    }

    #[test]
    fn monotonic_in_pump_and_isc() {
        let mut last_tau1 = f64::INFINITY;
        for i in 0..40 {
            let k_ge = 1e-4 * 1.4f64.powi(i);
            let tau1 = eigensystem(&table_one(k_ge)).unwrap().tau1;
            assert!(tau1 <= last_tau1 * (1.0 + 1e-12));
            last_tau1 = tau1;
        }
        for k_ge in [1e-3, 0.05, 2.0] {
            let mut last_c = f64::NEG_INFINITY;
            for i in 1..40 {
                let k_es = 0.002 * i as f64;
                let rc = RateCoefficients::new(k_ge, 1.0 / 12.0, k_es, 1.0 / 120.0).unwrap();
                let c = bunching_amplitude(&rc).unwrap();
                assert!(c >= last_c - 1e-12, "k_ge={k_ge} k_es={k_es}");
                last_c = c;
            }
        }
    }

    fn rates() -> impl Strategy<Value = RateCoefficients> {
        (-4.0f64..1.0, -2.5f64..0.0, -3.0f64..-0.5, -3.5f64..-1.0)
            .prop_map(|(a, b, c, d)| {
                RateCoefficients::new(10f64.powf(a), 10f64.powf(b), 10f64.powf(c), 10f64.powf(d))
                    .unwrap()
            })
            // keep clear of the oscillatory and degenerate regimes
            .prop_filter("real, separated spectrum", |rc| {
                let (a, b) = (rc.trace_sum(), rc.determinant_sum());
                a * a - 4.0 * b > 1e-3 * a * a
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn closed_form_matches_numeric_eigenvalues(rc in rates()) {
            let es = eigensystem(&rc).unwrap();
            let num = numeric_decay_constants(&generator_matrix(&rc));
            prop_assert!((num[1] - es.lambda[2]).abs() <= 1e-10 * es.lambda[1]);
            prop_assert!((num[2] - es.lambda[1]).abs() <= 1e-10 * es.lambda[1]);
            prop_assert!(es.tau1 <= es.tau2);
        }

        #[test]
        fn g2_closed_form_matches_propagation(rc in rates(), t in 0.0f64..1000.0) {
            let (t1, t2, c) = g2_parameters(&rc).unwrap();
            let d = (g2_analytic(t1, t2, c, t) - g2_expm(&rc, t)).abs();
            prop_assert!(d < 1e-9, "diff {}", d);
        }

        #[test]
        fn propagated_populations_stay_physical(rc in rates(), t in 0.0f64..1e4) {
            let n = (generator_matrix(&rc) * t).exp() * Vector3::new(1.0, 0.0, 0.0);
            prop_assert!((n.sum() - 1.0).abs() < 1e-9);
            prop_assert!(n.iter().all(|&x| x > -1e-9));
        }
    }
}
