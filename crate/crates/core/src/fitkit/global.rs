//! Simultaneous fit of `τ₁(I)`, `τ₂(I)`, `c(I)` over an intensity series.
//!
//! The free parameters are the asymptotic limits plus the pump coefficient
//! `κ` (`k_ge = κ·I`). For every intensity the limits are mapped to rates,
//! the generator's eigensystem gives the predicted `(τ₁, τ₂, c)`, and the
//! difference to the per-curve fit is whitened with that fit's 3×3
//! covariance. All parameters are positive and fitted on a log scale.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::engine::{least_squares, LsqOptions, ResidualModel};
use super::{map_jacobian, propagate, FitResult};
use crate::error::{Error, Result};
use crate::ratemodel::{
    g2_parameters, rates_from_limits_3level, rates_from_limits_4level, LevelModel,
    PhotophysicsLimits,
};

/// One intensity of the series with its per-curve g² fit.
#[derive(Debug, Clone)]
pub struct SeriesPoint {
    /// kW/cm².
    pub intensity: f64,
    pub fit: FitResult,
}

/// How the four-level model treats `I₀` in `k_sg(I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaturationIntensity {
    /// Fixed, e.g. to the PL saturation fit.
    Shared(f64),
    /// Fitted, starting from the given value.
    Free(f64),
}

impl SaturationIntensity {
    pub fn value(&self) -> f64 {
        match *self {
            SaturationIntensity::Shared(v) | SaturationIntensity::Free(v) => v,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlobalFitOptions {
    pub model: LevelModel,
    /// Also used for the cross section.
    pub i0_sat: SaturationIntensity,
    pub wavelength_nm: f64,
    /// Whiten with the full 3×3 covariance of each per-curve fit; otherwise
    /// only its diagonal.
    pub use_covariance: bool,
    pub initial: Option<(PhotophysicsLimits, f64)>,
    pub lsq: LsqOptions,
}

impl Default for GlobalFitOptions {
    fn default() -> Self {
        Self {
            model: LevelModel::ThreeLevel,
            i0_sat: SaturationIntensity::Shared(44.0),
            wavelength_nm: 785.0,
            use_covariance: true,
            initial: None,
            lsq: LsqOptions::default(),
        }
    }
}

pub struct GlobalModel {
    pub model: LevelModel,
    pub intensities: Vec<f64>,
    pub observed: Vec<Vector3<f64>>,
    /// Inverse Cholesky factors of the per-point covariances.
    whiten: Vec<Matrix3<f64>>,
    pub i0_sat: SaturationIntensity,
}

/// Residual assigned to parameter sets that map to no valid rates.
const INFEASIBLE: f64 = 1e8;

impl GlobalModel {
    pub fn new(series: &[SeriesPoint], opts: &GlobalFitOptions) -> Result<Self> {
        let mut intensities = Vec::new();
        let mut observed = Vec::new();
        let mut whiten = Vec::new();
        for pt in series {
            let f = &pt.fit;
            let obs = Vector3::new(f.value("tau1"), f.value("tau2"), f.value("c"));
            let mut cov =
                Matrix3::from_iterator(f.covariance_of(&["tau1", "tau2", "c"])?.iter().cloned());
            if !opts.use_covariance {
                cov = Matrix3::from_diagonal(&cov.diagonal());
            }
            let chol = cov.cholesky().ok_or_else(|| {
                Error::domain(format!(
                    "covariance of the fit at I = {} is not positive definite",
                    pt.intensity
                ))
            })?;
            let inv_l = chol
                .l()
                .try_inverse()
                .ok_or_else(|| Error::domain("singular covariance"))?;
            intensities.push(pt.intensity);
            observed.push(obs);
            whiten.push(inv_l);
        }
        Ok(Self {
            model: opts.model,
            intensities,
            observed,
            whiten,
            i0_sat: opts.i0_sat,
        })
    }

    fn free_i0(&self) -> bool {
        matches!(self.i0_sat, SaturationIntensity::Free(_))
    }

    /// External parameters `(limits, κ, I₀)` from the log-scale vector.
    pub fn unpack(&self, u: &[f64]) -> (PhotophysicsLimits, f64, f64) {
        let e: Vec<f64> = u.iter().map(|x| x.exp()).collect();
        match self.model {
            LevelModel::ThreeLevel => (
                PhotophysicsLimits::three_level(e[0], e[1], e[2]),
                e[3],
                self.i0_sat.value(),
            ),
            LevelModel::FourLevel => {
                let i0 = if self.free_i0() {
                    e[5]
                } else {
                    self.i0_sat.value()
                };
                (
                    PhotophysicsLimits::four_level(e[0], e[1], e[2], e[3]),
                    e[4],
                    i0,
                )
            }
        }
    }

    pub fn pack(&self, limits: &PhotophysicsLimits, kappa: f64, i0: f64) -> Vec<f64> {
        let mut v = match self.model {
            LevelModel::ThreeLevel => vec![limits.tau1_0, limits.tau2_inf, limits.c_inf, kappa],
            LevelModel::FourLevel => vec![
                limits.tau1_0,
                limits.tau2_0.unwrap_or(10.0 * limits.tau2_inf),
                limits.tau2_inf,
                limits.c_inf,
                kappa,
            ],
        };
        if self.model == LevelModel::FourLevel && self.free_i0() {
            v.push(i0);
        }
        v.iter().map(|x| x.ln()).collect()
    }

    /// Predicted `(τ₁, τ₂, c)` at one intensity.
    pub fn predict_at(
        limits: &PhotophysicsLimits,
        kappa: f64,
        i0: f64,
        model: LevelModel,
        intensity: f64,
    ) -> Result<Vector3<f64>> {
        let k_ge = kappa * intensity;
        let rc = match model {
            LevelModel::ThreeLevel => rates_from_limits_3level(limits)?.with_pump(k_ge)?,
            LevelModel::FourLevel => {
                rates_from_limits_4level(limits)?.at_intensity(k_ge, intensity, i0)?
            }
        };
        let (t1, t2, c) = g2_parameters(&rc)?;
        Ok(Vector3::new(t1, t2, c))
    }
}

impl ResidualModel for GlobalModel {
    fn n_params(&self) -> usize {
        match self.model {
            LevelModel::ThreeLevel => 4,
            LevelModel::FourLevel => 5 + usize::from(self.free_i0()),
        }
    }

    fn n_residuals(&self) -> usize {
        3 * self.intensities.len()
    }

    fn residuals(&self, u: &[f64], r: &mut [f64]) {
        let (lim, kappa, i0) = self.unpack(u);
        for (k, &int) in self.intensities.iter().enumerate() {
            match Self::predict_at(&lim, kappa, i0, self.model, int) {
                Ok(pred) => {
                    let w = self.whiten[k] * (pred - self.observed[k]);
                    r[3 * k..3 * k + 3].copy_from_slice(w.as_slice());
                }
                Err(_) => r[3 * k..3 * k + 3].fill(INFEASIBLE),
            }
        }
    }

    fn param_names(&self) -> Vec<String> {
        let mut n: Vec<String> = match self.model {
            LevelModel::ThreeLevel => vec!["tau1_0", "tau2_inf", "c_inf", "kappa"],
            LevelModel::FourLevel => vec!["tau1_0", "tau2_0", "tau2_inf", "c_inf", "kappa"],
        }
        .into_iter()
        .map(String::from)
        .collect();
        if self.model == LevelModel::FourLevel && self.free_i0() {
            n.push("i0_sat".into());
        }
        n
    }
}

/// Seeds from the data: `1/τ₁` is nearly linear in `I` with slope `κ`, and
/// the highest intensity approximates the high-intensity limits.
fn seeds(model: &GlobalModel) -> Vec<Vec<f64>> {
    let n = model.intensities.len() as f64;
    let xs = &model.intensities;
    let ys: Vec<f64> = model.observed.iter().map(|o| 1.0 / o[0]).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = if sxx > 0.0 {
        (sxy / sxx).max(1e-8)
    } else {
        1e-4
    };
    let intercept = (my - slope * mx).max(0.2 * my);
    let top = model
        .intensities
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| model.observed[k])
        .unwrap();
    let bottom = model
        .intensities
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| model.observed[k])
        .unwrap();
    let mut out = Vec::new();
    for f_tau in [1.0, 0.7] {
        for f_c in [1.0, 1.5, 0.6] {
            let c_inf = (top[2] * f_c).max(0.1);
            let tau2_inf = top[1] * f_tau;
            let lim = PhotophysicsLimits {
                tau2_0: Some(bottom[1].max(3.0 * tau2_inf)),
                ..PhotophysicsLimits::three_level(1.0 / intercept, tau2_inf, c_inf)
            };
            out.push(model.pack(&lim, slope, model.i0_sat.value()));
        }
    }
    out
}

/// Global photophysics fit over an intensity series.
pub fn global_photophysics_fit(
    series: &[SeriesPoint],
    opts: &GlobalFitOptions,
) -> Result<FitResult> {
    let mut distinct: Vec<f64> = series.iter().map(|p| p.intensity).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::RankDeficient {
            direction: "kappa".into(),
        });
    }
    let model = GlobalModel::new(series, opts)?;
    let n = model.n_params();
    if model.n_residuals() < n {
        return Err(Error::RankDeficient {
            direction: model.param_names()[model.n_residuals()].clone(),
        });
    }
    let mut starts = match &opts.initial {
        Some((lim, kappa)) => vec![model.pack(lim, *kappa, opts.i0_sat.value())],
        None => seeds(&model),
    };
    let first = starts.remove(0);
    let lsq = LsqOptions {
        extra_starts: starts,
        ..opts.lsq.clone()
    };
    let sol = least_squares(&model, &first, &lsq)?;

    let ext: Vec<f64> = sol.params.iter().map(|x| x.exp()).collect();
    let t = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(ext.clone()));
    let cov = propagate(&t, &sol.covariance);
    let names = model.param_names();
    let units: Vec<&str> = names
        .iter()
        .map(|n| match n.as_str() {
            "c_inf" => "",
            "kappa" => "1/ns per kW/cm^2",
            "i0_sat" => "kW/cm^2",
            _ => "ns",
        })
        .collect();
    let spec: Vec<(&str, &str)> = names.iter().map(String::as_str).zip(units).collect();
    let label = match opts.model {
        LevelModel::ThreeLevel => "global_three_level",
        LevelModel::FourLevel => "global_four_level",
    };
    let mut fit = FitResult::assemble(label, &spec, &ext, &cov, &sol);
    if distinct.len() < 4 {
        fit.warnings.push(format!(
            "only {} intensities; limits are weakly constrained",
            distinct.len()
        ));
    }

    // rates and cross section with propagated uncertainties
    let wl = opts.wavelength_nm;
    let free_i0 = model.free_i0();
    let fixed_i0 = opts.i0_sat.value();
    let derived_names: Vec<(&str, &str)>;
    let derive: Box<dyn Fn(&[f64]) -> Result<Vec<f64>>> = match opts.model {
        LevelModel::ThreeLevel => {
            derived_names = vec![
                ("k_eg", "1/ns"),
                ("k_es", "1/ns"),
                ("k_sg", "1/ns"),
                ("1/k_eg", "ns"),
                ("1/k_es", "ns"),
                ("1/k_sg", "ns"),
                ("cross_section", "cm^2"),
            ];
            Box::new(move |x: &[f64]| {
                let r =
                    rates_from_limits_3level(&PhotophysicsLimits::three_level(x[0], x[1], x[2]))?;
                let sigma = r.cross_section(fixed_i0, wl)?;
                Ok(vec![
                    r.k_eg,
                    r.k_es,
                    r.k_sg,
                    1.0 / r.k_eg,
                    1.0 / r.k_es,
                    1.0 / r.k_sg,
                    sigma,
                ])
            })
        }
        LevelModel::FourLevel => {
            derived_names = vec![
                ("k_eg", "1/ns"),
                ("k_es", "1/ns"),
                ("k_sg0", "1/ns"),
                ("k_sg_inf", "1/ns"),
                ("d", "1/ns"),
                ("1/k_eg", "ns"),
                ("1/k_es", "ns"),
                ("1/k_sg0", "ns"),
                ("1/k_sg_inf", "ns"),
                ("1/d", "ns"),
                ("cross_section", "cm^2"),
            ];
            Box::new(move |x: &[f64]| {
                let r = rates_from_limits_4level(&PhotophysicsLimits::four_level(
                    x[0], x[1], x[2], x[3],
                ))?;
                let i0 = if free_i0 { x[5] } else { fixed_i0 };
                let sigma = r.cross_section(i0, wl)?;
                Ok(vec![
                    r.k_eg,
                    r.k_es,
                    r.k_sg0,
                    r.k_sg_inf,
                    r.d,
                    1.0 / r.k_eg,
                    1.0 / r.k_es,
                    1.0 / r.k_sg0,
                    1.0 / r.k_sg_inf,
                    1.0 / r.d,
                    sigma,
                ])
            })
        }
    };
    match (derive(&ext), map_jacobian(&derive, &ext)) {
        (Ok(vals), Ok(j)) => {
            let dc = propagate(&j, &cov);
            for (k, (name, unit)) in derived_names.iter().enumerate() {
                fit.push_derived(name, vals[k], dc[(k, k)].max(0.0).sqrt(), unit);
            }
        }
        (Err(e), _) | (_, Err(e)) => fit
            .warnings
            .push(format!("rates not derivable from the fitted limits: {e}")),
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitkit::jacobian_check;
    use crate::fitkit::Parameter;
    use crate::ratemodel::{pump_coefficient, FourLevelRates};

    const KAPPA: f64 = 0.019048 / 44.0;
    const INTENSITIES: [f64; 6] = [2.6, 10.0, 44.0, 135.0, 250.0, 378.0];

    /// A per-curve fit result carrying exact values and a relative error.
    fn fake_fit(v: Vector3<f64>, rel: f64) -> FitResult {
        let names = ["tau1", "tau2", "c", "tau0"];
        let vals = [v[0], v[1], v[2], 0.0];
        let sig = [rel * v[0], rel * v[1], rel * v[2].abs().max(0.01), 0.1];
        FitResult {
            model: "g2".into(),
            parameters: names
                .iter()
                .enumerate()
                .map(|(k, n)| Parameter {
                    name: n.to_string(),
                    value: vals[k],
                    uncertainty: sig[k],
                    unit: String::new(),
                })
                .collect(),
            covariance: (0..4)
                .map(|i| {
                    (0..4)
                        .map(|j| if i == j { sig[i] * sig[i] } else { 0.0 })
                        .collect()
                })
                .collect(),
            residual_norm: 0.0,
            n_data: 100,
            converged: true,
            iterations: 1,
            derived: vec![],
            warnings: vec![],
            uncertainty_model: "covariance".into(),
        }
    }

    fn series_3level(lim: &PhotophysicsLimits) -> Vec<SeriesPoint> {
        INTENSITIES
            .iter()
            .map(|&i| SeriesPoint {
                intensity: i,
                fit: fake_fit(
                    GlobalModel::predict_at(lim, KAPPA, 44.0, LevelModel::ThreeLevel, i).unwrap(),
                    0.05,
                ),
            })
            .collect()
    }

    #[test]
    fn three_level_exact_series_recovers_limits() {
        let lim = PhotophysicsLimits::three_level(7.5, 17.2, 6.0);
        let fit =
            global_photophysics_fit(&series_3level(&lim), &GlobalFitOptions::default()).unwrap();
        assert!(fit.converged);
        for (n, v) in [
            ("tau1_0", 7.5),
            ("tau2_inf", 17.2),
            ("c_inf", 6.0),
            ("kappa", KAPPA),
        ] {
            assert!(
                (fit.value(n) / v - 1.0).abs() < 1e-6,
                "{n} = {}",
                fit.value(n)
            );
        }
        assert!((fit.value("1/k_eg") - 12.0).abs() < 0.2);
        assert!(fit.sigma("1/k_sg") > 0.0);
        // κ consistent with σ/hν
        let kappa_sigma = pump_coefficient(fit.value("cross_section"), 785.0);
        assert!((kappa_sigma / KAPPA - 1.0).abs() < 0.05);
    }

    #[test]
    fn four_level_exact_series_recovers_limits() {
        let lim = PhotophysicsLimits::four_level(6.7, 204.4, 14.9, 6.3);
        let rates: FourLevelRates = rates_from_limits_4level(&lim).unwrap();
        let series: Vec<SeriesPoint> = INTENSITIES
            .iter()
            .map(|&i| {
                let (t1, t2, c) =
                    g2_parameters(&rates.at_intensity(KAPPA * i, i, 44.0).unwrap()).unwrap();
                SeriesPoint {
                    intensity: i,
                    fit: fake_fit(Vector3::new(t1, t2, c), 0.02),
                }
            })
            .collect();
        let opts = GlobalFitOptions {
            model: LevelModel::FourLevel,
            ..Default::default()
        };
        let fit = global_photophysics_fit(&series, &opts).unwrap();
        for (n, v) in [
            ("tau1_0", 6.7),
            ("tau2_0", 204.4),
            ("tau2_inf", 14.9),
            ("c_inf", 6.3),
        ] {
            assert!(
                (fit.value(n) / v - 1.0).abs() < 1e-5,
                "{n} = {}",
                fit.value(n)
            );
        }
        assert!((fit.value("1/d") - 232.0).abs() < 1.0);
    }

    #[test]
    fn single_intensity_is_unidentifiable() {
        let lim = PhotophysicsLimits::three_level(7.5, 17.2, 6.0);
        let s = &series_3level(&lim)[..1];
        assert!(matches!(
            global_photophysics_fit(s, &GlobalFitOptions::default()),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn jacobian_of_global_model() {
        let lim = PhotophysicsLimits::three_level(7.5, 17.2, 6.0);
        let series = series_3level(&lim);
        let m = GlobalModel::new(&series, &GlobalFitOptions::default()).unwrap();
        let u = m.pack(
            &PhotophysicsLimits::three_level(8.0, 16.0, 5.0),
            KAPPA * 1.1,
            44.0,
        );
        assert!(jacobian_check(&m, &u) < 1e-6);
    }
}
