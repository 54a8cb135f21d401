//! ODMR spectra: multi-Lorentzian decomposition and the power laws of
//! peak amplitude and linewidth.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::engine::{
    check_data, least_squares, CovarianceScaling, LsqOptions, RankPolicy, ResidualModel,
};
use super::{propagate, FitResult};
use crate::correlator::io::read_columns_csv;
use crate::error::{Error, Result};

/// Relative PL change versus RF frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdmrSpectrum {
    pub frequency_mhz: Vec<f64>,
    /// ΔPL/PL in percent (or peak-normalized for simulated spectra).
    pub contrast_percent: Vec<f64>,
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub rf_power_w: Option<f64>,
    #[serde(default)]
    pub laser_intensity_kw_cm2: Option<f64>,
    /// RF coupling of a simulated spectrum.
    #[serde(default)]
    pub omega1_mhz: Option<f64>,
}

impl OdmrSpectrum {
    pub fn new(
        frequency_mhz: Vec<f64>,
        contrast_percent: Vec<f64>,
        sigma: Vec<f64>,
    ) -> Result<Self> {
        let s = Self {
            frequency_mhz,
            contrast_percent,
            sigma,
            rf_power_w: None,
            laser_intensity_kw_cm2: None,
            omega1_mhz: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        check_data(&self.frequency_mhz, &self.contrast_percent, &self.sigma)?;
        if self.frequency_mhz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("frequencies must be strictly increasing"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frequency_mhz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequency_mhz.is_empty()
    }

    /// Linear interpolation of the contrast, clamped at the ends.
    pub fn contrast_at(&self, f: f64) -> f64 {
        let x = &self.frequency_mhz;
        let y = &self.contrast_percent;
        if f <= x[0] {
            return y[0];
        }
        if f >= x[x.len() - 1] {
            return y[y.len() - 1];
        }
        let k = x.partition_point(|&v| v <= f);
        let t = (f - x[k - 1]) / (x[k] - x[k - 1]);
        y[k - 1] + t * (y[k] - y[k - 1])
    }

    /// CSV with `# key=value` metadata lines, then
    /// `frequency_mhz,contrast_percent,sigma`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for (k, v) in [
            ("rf_power_w", self.rf_power_w),
            ("laser_intensity_kw_cm2", self.laser_intensity_kw_cm2),
            ("omega1_mhz", self.omega1_mhz),
        ] {
            if let Some(v) = v {
                writeln!(out, "# {k}={v:e}").unwrap();
            }
        }
        writeln!(out, "frequency_mhz,contrast_percent,sigma").unwrap();
        for i in 0..self.len() {
            writeln!(
                out,
                "{:e},{:e},{:e}",
                self.frequency_mhz[i], self.contrast_percent[i], self.sigma[i]
            )
            .unwrap();
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let [f, c, s] = read_columns_csv(path, ["frequency_mhz", "contrast_percent", "sigma"])?;
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::new(f, c, s).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            column: 0,
            message: e.to_string(),
        })?;
        for (i, line) in text.lines().enumerate() {
            let Some(meta) = line.trim().strip_prefix('#') else {
                continue;
            };
            let Some((k, v)) = meta.split_once('=') else {
                continue;
            };
            let value = v.trim().parse::<f64>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                column: 1,
                message: format!("{}: {e}", k.trim()),
            })?;
            match k.trim() {
                "rf_power_w" => spec.rf_power_w = Some(value),
                "laser_intensity_kw_cm2" => spec.laser_intensity_kw_cm2 = Some(value),
                "omega1_mhz" => spec.omega1_mhz = Some(value),
                _ => {}
            }
        }
        Ok(spec)
    }
}

/// `Σ Aₖ·(Γₖ/2)²/((f − f₀ₖ)² + (Γₖ/2)²)` for `(f₀, Γ, A)` triples.
pub fn lorentzian_sum(f: f64, peaks: &[[f64; 3]]) -> f64 {
    peaks
        .iter()
        .map(|&[f0, fwhm, a]| {
            let h = 0.5 * fwhm;
            a * h * h / ((f - f0).powi(2) + h * h)
        })
        .sum()
}

/// Per peak `(f₀, ln Γ, A)`.
pub struct LorentzianModel<'a> {
    pub spectrum: &'a OdmrSpectrum,
    pub n_peaks: usize,
}

impl LorentzianModel<'_> {
    fn peaks(&self, u: &[f64]) -> Vec<[f64; 3]> {
        u.chunks(3).map(|c| [c[0], c[1].exp(), c[2]]).collect()
    }
}

impl ResidualModel for LorentzianModel<'_> {
    fn n_params(&self) -> usize {
        3 * self.n_peaks
    }
    fn n_residuals(&self) -> usize {
        self.spectrum.len()
    }
    fn residuals(&self, u: &[f64], r: &mut [f64]) {
        let peaks = self.peaks(u);
        let s = self.spectrum;
        for i in 0..s.len() {
            r[i] =
                (lorentzian_sum(s.frequency_mhz[i], &peaks) - s.contrast_percent[i]) / s.sigma[i];
        }
    }
    fn jacobian(&self, u: &[f64], j: &mut DMatrix<f64>) {
        let peaks = self.peaks(u);
        let s = self.spectrum;
        for i in 0..s.len() {
            let f = s.frequency_mhz[i];
            for (k, &[f0, fwhm, a]) in peaks.iter().enumerate() {
                let h = 0.5 * fwhm;
                let x = f - f0;
                let d = x * x + h * h;
                j[(i, 3 * k)] = a * h * h * 2.0 * x / (d * d) / s.sigma[i];
                j[(i, 3 * k + 1)] = h * (2.0 * a * h * x * x / (d * d)) / s.sigma[i];
                j[(i, 3 * k + 2)] = h * h / d / s.sigma[i];
            }
        }
    }
    fn param_names(&self) -> Vec<String> {
        (1..=self.n_peaks)
            .flat_map(|k| {
                [
                    format!("center_{k}"),
                    format!("fwhm_{k}"),
                    format!("amplitude_{k}"),
                ]
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct LorentzianOptions {
    /// Start centers in MHz; the default seeds are 72, 36 and 24 MHz.
    pub centers: Option<Vec<f64>>,
    /// Start FWHM in MHz; estimated from the strongest peak when absent.
    pub fwhm: Option<f64>,
    pub covariance_scaling: CovarianceScaling,
    /// |correlation| above which overlapping peaks are flagged.
    pub overlap_correlation: f64,
}

impl Default for LorentzianOptions {
    fn default() -> Self {
        Self {
            centers: None,
            fwhm: None,
            covariance_scaling: CovarianceScaling::None,
            overlap_correlation: 0.95,
        }
    }
}

const DEFAULT_CENTERS: [f64; 3] = [72.0, 36.0, 24.0];

/// Full width at half maximum of the tallest feature, by walking outwards.
fn estimate_fwhm(s: &OdmrSpectrum) -> f64 {
    let (imax, &ymax) = s
        .contrast_percent
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .unwrap();
    let half = 0.5 * ymax.abs();
    let mut lo = imax;
    while lo > 0 && s.contrast_percent[lo].abs() > half {
        lo -= 1;
    }
    let mut hi = imax;
    while hi + 1 < s.len() && s.contrast_percent[hi].abs() > half {
        hi += 1;
    }
    (s.frequency_mhz[hi] - s.frequency_mhz[lo]).clamp(0.2, 40.0)
}

/// Fits 2 or 3 Lorentzians. Peaks are reported sorted by descending center
/// as `center_k`, `fwhm_k`, `amplitude_k`.
pub fn fit_lorentzians(
    spectrum: &OdmrSpectrum,
    n_peaks: usize,
    opts: &LorentzianOptions,
) -> Result<FitResult> {
    if !(2..=3).contains(&n_peaks) {
        return Err(Error::domain(format!(
            "n_peaks must be 2 or 3, got {n_peaks}"
        )));
    }
    spectrum.validate()?;
    let centers: Vec<f64> = match &opts.centers {
        Some(c) if c.len() == n_peaks => c.clone(),
        Some(c) => {
            return Err(Error::Configuration(format!(
                "{} start centers for {n_peaks} peaks",
                c.len()
            )))
        }
        None => DEFAULT_CENTERS[..n_peaks].to_vec(),
    };
    let w0 = opts.fwhm.unwrap_or_else(|| estimate_fwhm(spectrum));
    let start = |scale: f64| -> Vec<f64> {
        centers
            .iter()
            .flat_map(|&c| [c, (w0 * scale).ln(), spectrum.contrast_at(c)])
            .collect()
    };
    let model = LorentzianModel { spectrum, n_peaks };
    let lsq = LsqOptions {
        extra_starts: vec![start(0.3), start(3.0)],
        rank_policy: RankPolicy::Warn,
        covariance_scaling: opts.covariance_scaling,
        ..Default::default()
    };
    let sol = least_squares(&model, &start(1.0), &lsq)?;

    // external (f₀, Γ, A) and the descending-center permutation
    let n = 3 * n_peaks;
    let mut t = DMatrix::zeros(n, n);
    let mut ext = vec![0.0; n];
    for k in 0..n_peaks {
        ext[3 * k] = sol.params[3 * k];
        ext[3 * k + 1] = sol.params[3 * k + 1].exp();
        ext[3 * k + 2] = sol.params[3 * k + 2];
        t[(3 * k, 3 * k)] = 1.0;
        t[(3 * k + 1, 3 * k + 1)] = ext[3 * k + 1];
        t[(3 * k + 2, 3 * k + 2)] = 1.0;
    }
    let cov = propagate(&t, &sol.covariance);
    let mut order: Vec<usize> = (0..n_peaks).collect();
    order.sort_by(|&a, &b| ext[3 * b].total_cmp(&ext[3 * a]));
    let perm: Vec<usize> = order
        .iter()
        .flat_map(|&k| [3 * k, 3 * k + 1, 3 * k + 2])
        .collect();
    let values: Vec<f64> = perm.iter().map(|&i| ext[i]).collect();
    let cov = DMatrix::from_fn(n, n, |i, j| cov[(perm[i], perm[j])]);
    let names = model.param_names();
    let spec: Vec<(&str, &str)> = names
        .iter()
        .map(|s| {
            (
                s.as_str(),
                if s.starts_with("amplitude") {
                    "%"
                } else {
                    "MHz"
                },
            )
        })
        .collect();
    let mut fit = FitResult::assemble(&format!("lorentzian_{n_peaks}"), &spec, &values, &cov, &sol);

    for a in 0..n {
        for b in (a + 1)..n {
            let (pa, pb) = (a / 3, b / 3);
            if pa == pb {
                continue;
            }
            let denom = (cov[(a, a)] * cov[(b, b)]).sqrt();
            if denom > 0.0 && (cov[(a, b)] / denom).abs() > opts.overlap_correlation {
                fit.warnings.push(format!(
                    "peaks {} and {} overlap: corr({}, {}) = {:.3}",
                    pa + 1,
                    pb + 1,
                    names[a],
                    names[b],
                    cov[(a, b)] / denom
                ));
            }
        }
    }
    Ok(fit)
}

/// Fitted peaks in descending-center order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakTable {
    pub centers: Vec<f64>,
    pub fwhm: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub fwhm_sigma: Vec<f64>,
}

impl PeakTable {
    pub fn from_fit(fit: &FitResult) -> Self {
        let n = fit.parameters.len() / 3;
        let get = |p: &str, k: usize| fit.get(&format!("{p}_{k}")).map_or(f64::NAN, |x| x.value);
        Self {
            centers: (1..=n).map(|k| get("center", k)).collect(),
            fwhm: (1..=n).map(|k| get("fwhm", k)).collect(),
            amplitudes: (1..=n).map(|k| get("amplitude", k)).collect(),
            fwhm_sigma: (1..=n).map(|k| fit.sigma(&format!("fwhm_{k}"))).collect(),
        }
    }

    /// Index of the peak closest to `f`.
    pub fn nearest(&self, f: f64) -> usize {
        (0..self.centers.len())
            .min_by(|&a, &b| {
                (self.centers[a] - f)
                    .abs()
                    .total_cmp(&(self.centers[b] - f).abs())
            })
            .unwrap()
    }
}

struct LinearModel<'a> {
    x: &'a [f64],
    y: &'a [f64],
    sigma: &'a [f64],
}

impl ResidualModel for LinearModel<'_> {
    fn n_params(&self) -> usize {
        2
    }
    fn n_residuals(&self) -> usize {
        self.x.len()
    }
    fn residuals(&self, p: &[f64], r: &mut [f64]) {
        for i in 0..self.x.len() {
            r[i] = (p[0] + p[1] * self.x[i] - self.y[i]) / self.sigma[i];
        }
    }
    fn jacobian(&self, _p: &[f64], j: &mut DMatrix<f64>) {
        for i in 0..self.x.len() {
            j[(i, 0)] = 1.0 / self.sigma[i];
            j[(i, 1)] = self.x[i] / self.sigma[i];
        }
    }
    fn param_names(&self) -> Vec<String> {
        vec!["intercept".into(), "slope".into()]
    }
}

/// Weighted straight line `y = intercept + slope·x`.
pub fn fit_linear(x: &[f64], y: &[f64], sigma: &[f64]) -> Result<FitResult> {
    check_data(x, y, sigma)?;
    let m = LinearModel { x, y, sigma };
    let sol = least_squares(&m, &[0.0, 0.0], &LsqOptions::default())?;
    let cov = sol.covariance.clone();
    Ok(FitResult::assemble(
        "linear",
        &[("intercept", ""), ("slope", "")],
        &sol.params,
        &cov,
        &sol,
    ))
}

/// `S(P) = S_max·P^{c/2}/(Λ₀ + P^{c/2})`.
pub struct AmplitudeLaw<'a> {
    pub power_w: &'a [f64],
    pub amplitude: &'a [f64],
    pub sigma: &'a [f64],
    /// 1 for the one-photon peak, 2 for the two-photon peak.
    pub exponent: u32,
}

impl AmplitudeLaw<'_> {
    pub fn eval(s_max: f64, lambda0: f64, exponent: u32, p: f64) -> f64 {
        let x = p.powf(exponent as f64 / 2.0);
        s_max * x / (lambda0 + x)
    }
}

impl ResidualModel for AmplitudeLaw<'_> {
    fn n_params(&self) -> usize {
        2
    }
    fn n_residuals(&self) -> usize {
        self.power_w.len()
    }
    fn residuals(&self, p: &[f64], r: &mut [f64]) {
        for i in 0..r.len() {
            r[i] = (Self::eval(p[0], p[1], self.exponent, self.power_w[i]) - self.amplitude[i])
                / self.sigma[i];
        }
    }
    fn jacobian(&self, p: &[f64], j: &mut DMatrix<f64>) {
        for i in 0..self.power_w.len() {
            let x = self.power_w[i].powf(self.exponent as f64 / 2.0);
            let d = p[1] + x;
            j[(i, 0)] = x / d / self.sigma[i];
            j[(i, 1)] = -p[0] * x / (d * d) / self.sigma[i];
        }
    }
    fn param_names(&self) -> Vec<String> {
        vec!["s_max".into(), "lambda0".into()]
    }
}

/// Fits the amplitude saturation law with a fixed photon-order exponent.
pub fn fit_amplitude_vs_power(
    power_w: &[f64],
    amplitude: &[f64],
    sigma: &[f64],
    exponent: u32,
) -> Result<FitResult> {
    if !(1..=2).contains(&exponent) {
        return Err(Error::domain(format!(
            "exponent must be 1 or 2, got {exponent}"
        )));
    }
    if power_w.len() < 3 {
        return Err(Error::domain("amplitude fit needs at least 3 powers"));
    }
    check_data(power_w, amplitude, sigma)?;
    if power_w.iter().any(|&p| p < 0.0) {
        return Err(Error::domain("RF power must be nonnegative"));
    }
    let model = AmplitudeLaw {
        power_w,
        amplitude,
        sigma,
        exponent,
    };
    let top = amplitude.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lsq = LsqOptions {
        extra_starts: vec![vec![2.0 * top, 2.0], vec![1.05 * top, 0.1]],
        ..Default::default()
    };
    let sol = least_squares(&model, &[1.3 * top, 0.5], &lsq)?;
    let unit_l = if exponent == 1 { "W^1/2" } else { "W" };
    let cov = sol.covariance.clone();
    Ok(FitResult::assemble(
        &format!("amplitude_law_c{exponent}"),
        &[("s_max", "%"), ("lambda0", unit_l)],
        &sol.params,
        &cov,
        &sol,
    ))
}

/// Fits `LW = LW₀ + a·√P` and derives `T₂* = 1/(π·LW₀)`.
pub fn fit_linewidth_vs_power(
    power_w: &[f64],
    linewidth_mhz: &[f64],
    sigma: &[f64],
) -> Result<FitResult> {
    if power_w.len() < 3 {
        return Err(Error::domain("linewidth fit needs at least 3 powers"));
    }
    if power_w.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::domain("RF power must be nonnegative"));
    }
    let x: Vec<f64> = power_w.iter().map(|p| p.sqrt()).collect();
    let mut fit = fit_linear(&x, linewidth_mhz, sigma)?;
    fit.model = "linewidth_law".into();
    fit.parameters[0].name = "lw0".into();
    fit.parameters[0].unit = "MHz".into();
    fit.parameters[1].name = "a".into();
    fit.parameters[1].unit = "MHz/W^1/2".into();
    let (lw0, s) = (fit.value("lw0"), fit.sigma("lw0"));
    fit.push_derived("lw0_lower", lw0 - s, 0.0, "MHz");
    fit.push_derived("lw0_upper", lw0 + s, 0.0, "MHz");
    if lw0 > 0.0 {
        let (t2, st2) = dephasing_time_ns(lw0, s);
        fit.push_derived("t2_star", t2, st2, "ns");
    } else {
        fit.warnings.push(format!(
            "negative intercept lw0 = {lw0:.3} ± {s:.3} MHz; T2* not defined"
        ));
    }
    Ok(fit)
}

/// `T₂* = 1/(π·LW₀)` in ns for `LW₀` in MHz, with first-order error.
pub fn dephasing_time_ns(lw0_mhz: f64, sigma_mhz: f64) -> (f64, f64) {
    let t = 1e3 / (std::f64::consts::PI * lw0_mhz);
    (t, t * sigma_mhz / lw0_mhz)
}
