//! PL saturation: `S(I) = S_max·I/(I₀ + I)` for the emitter signal and
//! `B(I) = m·I + b` for the background, fitted jointly.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::engine::{least_squares, CovarianceScaling, LsqOptions, ResidualModel};
use super::{propagate, FitResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationPoint {
    /// kW/cm².
    pub intensity: f64,
    /// counts/s.
    pub signal: f64,
    pub background: f64,
    #[serde(default)]
    pub signal_sigma: Option<f64>,
    #[serde(default)]
    pub background_sigma: Option<f64>,
}

impl SaturationPoint {
    pub fn new(intensity: f64, signal: f64, background: f64) -> Self {
        Self {
            intensity,
            signal,
            background,
            signal_sigma: None,
            background_sigma: None,
        }
    }
}

/// Parameters `(ln S_max, ln I₀, m, b)`.
pub struct SaturationModel {
    pub points: Vec<SaturationPoint>,
}

impl SaturationModel {
    fn sigmas(&self, k: usize) -> (f64, f64) {
        let p = &self.points[k];
        (
            p.signal_sigma.unwrap_or(1.0),
            p.background_sigma.unwrap_or(1.0),
        )
    }

    pub fn signal(s_max: f64, i0: f64, intensity: f64) -> f64 {
        s_max * intensity / (i0 + intensity)
    }
}

impl ResidualModel for SaturationModel {
    fn n_params(&self) -> usize {
        4
    }
    fn n_residuals(&self) -> usize {
        2 * self.points.len()
    }
    fn residuals(&self, u: &[f64], r: &mut [f64]) {
        let (s_max, i0) = (u[0].exp(), u[1].exp());
        for (k, p) in self.points.iter().enumerate() {
            let (ss, sb) = self.sigmas(k);
            r[2 * k] = (Self::signal(s_max, i0, p.intensity) - p.signal) / ss;
            r[2 * k + 1] = (u[2] * p.intensity + u[3] - p.background) / sb;
        }
    }
    fn jacobian(&self, u: &[f64], j: &mut DMatrix<f64>) {
        let (s_max, i0) = (u[0].exp(), u[1].exp());
        j.fill(0.0);
        for (k, p) in self.points.iter().enumerate() {
            let (ss, sb) = self.sigmas(k);
            let s = Self::signal(s_max, i0, p.intensity);
            j[(2 * k, 0)] = s / ss;
            j[(2 * k, 1)] = -s * i0 / (i0 + p.intensity) / ss;
            j[(2 * k + 1, 2)] = p.intensity / sb;
            j[(2 * k + 1, 3)] = 1.0 / sb;
        }
    }
    fn param_names(&self) -> Vec<String> {
        ["s_max", "i0_sat", "m", "b"].map(String::from).to_vec()
    }
}

/// Fits the saturation curve and the linear background. Without per-point
/// errors the covariance is scaled by the reduced χ².
pub fn fit_saturation(points: &[SaturationPoint]) -> Result<FitResult> {
    if points.len() < 4 {
        return Err(Error::domain(format!(
            "saturation fit needs at least 4 intensities, got {}",
            points.len()
        )));
    }
    for p in points {
        let vals = [p.intensity, p.signal, p.background];
        if vals.iter().any(|v| !v.is_finite()) || p.intensity < 0.0 {
            return Err(Error::domain(
                "saturation data must be finite with nonnegative intensity",
            ));
        }
        for s in [p.signal_sigma, p.background_sigma].into_iter().flatten() {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::domain("standard errors must be positive"));
            }
        }
    }
    if points.iter().all(|p| p.signal <= 0.0) {
        return Err(Error::Degenerate(0.0));
    }
    let weighted = points
        .iter()
        .all(|p| p.signal_sigma.is_some() && p.background_sigma.is_some());
    let model = SaturationModel {
        points: points.to_vec(),
    };

    // seeds: the largest signal for S_max, and the half-signal intensity
    let s_top = points.iter().map(|p| p.signal).fold(0.0, f64::max);
    let i_mid = points
        .iter()
        .min_by(|a, b| {
            (a.signal - 0.5 * s_top)
                .abs()
                .total_cmp(&(b.signal - 0.5 * s_top).abs())
        })
        .map(|p| p.intensity.max(1e-3))
        .unwrap();
    let (m0, b0) = line_seed(points);
    let u0 = vec![(1.5 * s_top).ln(), i_mid.ln(), m0, b0];
    let extra = vec![
        vec![(1.1 * s_top).ln(), (0.5 * i_mid).ln(), m0, b0],
        vec![(3.0 * s_top).ln(), (3.0 * i_mid).ln(), m0, b0],
    ];
    let opts = LsqOptions {
        extra_starts: extra,
        covariance_scaling: if weighted {
            CovarianceScaling::None
        } else {
            CovarianceScaling::ReducedChiSquare
        },
        ..Default::default()
    };
    let sol = least_squares(&model, &u0, &opts)?;
    let (s_max, i0) = (sol.params[0].exp(), sol.params[1].exp());
    let t = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![s_max, i0, 1.0, 1.0]));
    let cov = propagate(&t, &sol.covariance);
    let spec = [
        ("s_max", "counts/s"),
        ("i0_sat", "kW/cm^2"),
        ("m", "counts cm^2/(kW s)"),
        ("b", "counts/s"),
    ];
    let mut fit = FitResult::assemble(
        "saturation",
        &spec,
        &[s_max, i0, sol.params[2], sol.params[3]],
        &cov,
        &sol,
    );
    if !weighted {
        fit.uncertainty_model = "covariance scaled by reduced chi-square".into();
    }
    Ok(fit)
}

fn line_seed(points: &[SaturationPoint]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.intensity).sum::<f64>() / n;
    let my = points.iter().map(|p| p.background).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.intensity - mx).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .map(|p| (p.intensity - mx) * (p.background - my))
        .sum();
    let m = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (m, my - m * mx)
}

/// Signal fraction `ρ = S/(S + B)` at an intensity, from a saturation fit.
pub fn signal_fraction_at(fit: &FitResult, intensity: f64) -> f64 {
    let s = SaturationModel::signal(fit.value("s_max"), fit.value("i0_sat"), intensity);
    let b = fit.value("m") * intensity + fit.value("b");
    s / (s + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitkit::jacobian_check;

    fn exact(s_max: f64, i0: f64, m: f64, b: f64) -> Vec<SaturationPoint> {
        [5.0, 15.0, 30.0, 50.0, 80.0, 120.0, 200.0, 300.0, 378.0]
            .iter()
            .map(|&i| SaturationPoint::new(i, s_max * i / (i0 + i), m * i + b))
            .collect()
    }

    #[test]
    fn noiseless_recovery() {
        let fit = fit_saturation(&exact(7800.0, 44.0, 15.9, 309.0)).unwrap();
        for (n, v) in [
            ("s_max", 7800.0),
            ("i0_sat", 44.0),
            ("m", 15.9),
            ("b", 309.0),
        ] {
            assert!((fit.value(n) / v - 1.0).abs() < 1e-8, "{n}");
        }
    }

    #[test]
    fn second_center_shape() {
        let fit = fit_saturation(&exact(6300.0, 53.0, 4.9, 130.0)).unwrap();
        assert!((fit.value("s_max") - 6300.0).abs() < 1e-4);
        assert!((fit.value("i0_sat") - 53.0).abs() < 1e-8);
    }

    #[test]
    fn rho_at_highest_intensity() {
        let fit = fit_saturation(&exact(7800.0, 44.0, 15.9, 309.0)).unwrap();
        let s = 7800.0 * 378.0 / 422.0;
        let b = 15.9 * 378.0 + 309.0;
        assert!((signal_fraction_at(&fit, 378.0) - s / (s + b)).abs() < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        let zero: Vec<_> = exact(0.0, 44.0, 15.9, 309.0);
        assert!(matches!(fit_saturation(&zero), Err(Error::Degenerate(_))));
        assert!(fit_saturation(&exact(7800.0, 44.0, 15.9, 309.0)[..3]).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut pts = exact(7800.0, 44.0, 15.9, 309.0);
        for p in &mut pts {
            p.signal_sigma = Some(0.03 * p.signal);
            p.background_sigma = Some(0.03 * p.background);
        }
        let m = SaturationModel { points: pts };
        assert!(jacobian_check(&m, &[8000f64.ln(), 40f64.ln(), 15.0, 300.0]) < 1e-6);
    }
}
