//! Frequency sweeps and the linewidth-versus-coupling scan.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evolve, steady_state, DissipatorSet, DriveConfig, EvolveOptions, StateDiagnostics};
use crate::error::{Error, Result};
use crate::fitkit::{
    fit_linear, fit_lorentzians, CovarianceScaling, FitResult, LorentzianOptions, OdmrSpectrum,
    PeakTable,
};

/// What a simulated spectrum reports at each drive frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastObservable {
    /// Loss of `|±1/2⟩` population at the end of the window, relative to
    /// the undriven steady state.
    #[default]
    FinalHalfPopulation,
    /// The same loss averaged over the window.
    MeanHalfPopulation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub observable: ContrastObservable,
    /// Scale to 100 at the largest response.
    pub normalize: bool,
    pub evolve: EvolveOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            observable: ContrastObservable::default(),
            normalize: true,
            evolve: EvolveOptions::default(),
        }
    }
}

/// Responses below this population change are treated as no response.
const FLAT: f64 = 1e-9;

/// Simulated spectrum over `freqs_mhz`; `template.omega_mhz` is ignored.
///
/// Each point starts from the undriven steady state. Points run on the
/// rayon pool and the result does not depend on the thread count.
pub fn odmr_sweep(
    freqs_mhz: &[f64],
    template: &DriveConfig,
    diss: &DissipatorSet,
    opts: &SweepOptions,
) -> Result<OdmrSpectrum> {
    odmr_sweep_with_diagnostics(freqs_mhz, template, diss, opts).map(|(s, _)| s)
}

/// [`odmr_sweep`] plus the worst state diagnostics met by any trajectory.
pub fn odmr_sweep_with_diagnostics(
    freqs_mhz: &[f64],
    template: &DriveConfig,
    diss: &DissipatorSet,
    opts: &SweepOptions,
) -> Result<(OdmrSpectrum, StateDiagnostics)> {
    if freqs_mhz.len() < 2 || freqs_mhz.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain(
            "frequency grid must be strictly increasing with at least 2 points",
        ));
    }
    template.validate()?;
    let rho0 = steady_state(diss, template.d_mhz)?;
    let p0 = rho0.half_population();
    let raw = freqs_mhz
        .par_iter()
        .map(|&f| {
            let cfg = DriveConfig {
                omega_mhz: f,
                ..*template
            };
            let ev = evolve(&rho0, &cfg, diss, &opts.evolve)
                .map_err(|e| Error::Integration(format!("at {f} MHz: {e}")))?;
            let v = match opts.observable {
                ContrastObservable::FinalHalfPopulation => {
                    p0 - (ev.final_state[(1, 1)].re + ev.final_state[(2, 2)].re)
                }
                ContrastObservable::MeanHalfPopulation => p0 - ev.mean_half_population,
            };
            Ok((v, ev.diagnostics))
        })
        .collect::<Result<Vec<(f64, StateDiagnostics)>>>()?;
    let diag = raw.iter().fold(rho0.diagnostics(), |w, (_, d)| w.worst(*d));
    let raw: Vec<f64> = raw.into_iter().map(|(v, _)| v).collect();
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if opts.normalize && peak > FLAT {
        100.0 / peak
    } else {
        100.0
    };
    let contrast: Vec<f64> = raw.iter().map(|v| v * scale).collect();
    let mut s = OdmrSpectrum::new(freqs_mhz.to_vec(), contrast, vec![1.0; freqs_mhz.len()])?;
    s.omega1_mhz = Some(template.omega1_mhz);
    Ok((s, diag))
}

/// One coupling strength of a linewidth scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinewidthRow {
    pub omega1_mhz: f64,
    /// Decomposition of the spectrum, absent when the fit failed.
    pub peaks: Option<PeakTable>,
    pub one_photon_fwhm: Option<f64>,
    pub two_photon_fwhm: Option<f64>,
    /// Why the row was left out of the linear fits.
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinewidthScan {
    pub rows: Vec<LinewidthRow>,
    /// `LW = LW₀ + a₁·Ω₁` for the peak near `2D`; parameters `lw0`, `a1`.
    pub one_photon: FitResult,
    /// The same for the peak near `D`.
    pub two_photon: FitResult,
    /// Worst state diagnostics over every simulated trajectory.
    pub diagnostics: StateDiagnostics,
}

fn line_fit(x: &[f64], y: &[f64], s: &[f64], label: &str) -> Result<FitResult> {
    if x.len() < 2 {
        return Err(Error::Configuration(format!(
            "{label}: fewer than 2 resolved spectra"
        )));
    }
    let mut fit = fit_linear(x, y, s)?;
    fit.model = format!("linewidth_vs_omega1_{label}");
    fit.parameters[0].name = "lw0".into();
    fit.parameters[0].unit = "MHz".into();
    fit.parameters[1].name = "a1".into();
    Ok(fit)
}

/// Simulates a spectrum per coupling, decomposes it into three Lorentzians
/// seeded at `2D`, `D`, `2D/3` and fits the 1- and 2-photon widths against
/// `Ω₁`.
pub fn linewidth_scan(
    omega1_grid: &[f64],
    freqs_mhz: &[f64],
    template: &DriveConfig,
    diss: &DissipatorSet,
    opts: &SweepOptions,
) -> Result<LinewidthScan> {
    let d = template.d_mhz;
    let mut rows = Vec::with_capacity(omega1_grid.len());
    let mut diagnostics: Option<StateDiagnostics> = None;
    for &w1 in omega1_grid {
        let (spec, diag) = odmr_sweep_with_diagnostics(
            freqs_mhz,
            &DriveConfig {
                omega1_mhz: w1,
                ..*template
            },
            diss,
            opts,
        )?;
        diagnostics = Some(diagnostics.map_or(diag, |w| w.worst(diag)));
        rows.push(decompose_spectrum(w1, &spec, d));
    }
    let diagnostics =
        diagnostics.ok_or_else(|| Error::Configuration("empty coupling grid".into()))?;
    let mut cols: [(Vec<f64>, Vec<f64>, Vec<f64>); 2] = Default::default();
    for r in rows.iter().filter(|r| r.flag.is_none()) {
        let t = r.peaks.as_ref().expect("unflagged rows carry peaks");
        for (k, target) in [2.0 * d, d].into_iter().enumerate() {
            let i = t.nearest(target);
            cols[k].0.push(r.omega1_mhz);
            cols[k].1.push(t.fwhm[i]);
            cols[k].2.push(t.fwhm_sigma[i]);
        }
    }
    let one_photon = line_fit(&cols[0].0, &cols[0].1, &cols[0].2, "1photon")?;
    let two_photon = line_fit(&cols[1].0, &cols[1].1, &cols[1].2, "2photon")?;
    Ok(LinewidthScan {
        rows,
        one_photon,
        two_photon,
        diagnostics,
    })
}

/// Reason a decomposition cannot be used, if any.
fn implausible(t: &PeakTable, lo: f64, hi: f64) -> Option<String> {
    let n = t.centers.len();
    for i in 0..n {
        if !(t.centers[i] >= lo && t.centers[i] <= hi) {
            return Some(format!("peak escaped the grid to {:.2} MHz", t.centers[i]));
        }
        for j in (i + 1)..n {
            if (t.centers[i] - t.centers[j]).abs() < 0.5 * t.fwhm[i].max(t.fwhm[j]) {
                return Some(format!(
                    "peaks at {:.2} and {:.2} MHz are not resolved",
                    t.centers[i], t.centers[j]
                ));
            }
        }
    }
    None
}

/// Three Lorentzians seeded at `2D`, `D`, `2D/3`, falling back to two when
/// the third peak wanders off or splits a neighbour.
pub fn decompose_spectrum(omega1: f64, spec: &OdmrSpectrum, d: f64) -> LinewidthRow {
    let mut row = LinewidthRow {
        omega1_mhz: omega1,
        peaks: None,
        one_photon_fwhm: None,
        two_photon_fwhm: None,
        flag: None,
    };
    let (lo, hi) = (spec.frequency_mhz[0], *spec.frequency_mhz.last().unwrap());
    let mut last_problem = String::new();
    for seeds in [vec![2.0 * d, d, 2.0 * d / 3.0], vec![2.0 * d, d]] {
        let opts = LorentzianOptions {
            centers: Some(seeds.clone()),
            covariance_scaling: CovarianceScaling::ReducedChiSquare,
            ..Default::default()
        };
        let t = match fit_lorentzians(spec, seeds.len(), &opts) {
            Ok(f) => PeakTable::from_fit(&f),
            Err(e) => {
                last_problem = format!("decomposition failed: {e}");
                continue;
            }
        };
        if let Some(p) = implausible(&t, lo, hi) {
            last_problem = p;
            continue;
        }
        let (i1, i2) = (t.nearest(2.0 * d), t.nearest(d));
        row.one_photon_fwhm = Some(t.fwhm[i1]);
        row.two_photon_fwhm = Some(t.fwhm[i2]);
        if i1 == i2 {
            row.flag = Some("1- and 2-photon peaks not separated".into());
        } else if (t.centers[i1] - 2.0 * d).abs() > 0.5 * d || (t.centers[i2] - d).abs() > 0.5 * d {
            row.flag = Some(format!(
                "peaks drifted to {:.2} / {:.2} MHz",
                t.centers[i1], t.centers[i2]
            ));
        } else if [i1, i2]
            .iter()
            .any(|&i| !(t.fwhm_sigma[i].is_finite() && t.fwhm_sigma[i] > 0.0))
        {
            row.flag = Some("linewidth uncertainty undefined".into());
        }
        row.peaks = Some(t);
        return row;
    }
    row.flag = Some(last_problem);
    row
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(a: f64, b: f64, step: f64) -> Vec<f64> {
        let n = ((b - a) / step).round() as usize;
        (0..=n).map(|i| a + step * i as f64).collect()
    }

    #[test]
    fn no_drive_gives_flat_spectrum() {
        let diss = DissipatorSet::new(7.0, 2.5, 185.0);
        let t = DriveConfig {
            omega1_mhz: 0.0,
            omega_mhz: 0.0,
            d_mhz: 35.0,
            duration_us: 1.5,
        };
        let s = odmr_sweep(&grid(20.0, 80.0, 5.0), &t, &diss, &SweepOptions::default()).unwrap();
        assert!(
            s.contrast_percent.iter().all(|c| c.abs() < 1e-6),
            "{:?}",
            s.contrast_percent
        );
    }

    #[test]
    fn sweep_is_independent_of_thread_count() {
        let diss = DissipatorSet::new(7.0, 2.5, 185.0);
        let t = DriveConfig {
            omega1_mhz: 2.0,
            omega_mhz: 0.0,
            d_mhz: 35.0,
            duration_us: 0.5,
        };
        let f = grid(60.0, 80.0, 2.0);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let two = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let a = one.install(|| odmr_sweep(&f, &t, &diss, &SweepOptions::default()).unwrap());
        let b = two.install(|| odmr_sweep(&f, &t, &diss, &SweepOptions::default()).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_grid() {
        let diss = DissipatorSet::new(7.0, 2.5, 185.0);
        let t = DriveConfig {
            omega1_mhz: 2.0,
            omega_mhz: 0.0,
            d_mhz: 35.0,
            duration_us: 1.5,
        };
        assert!(odmr_sweep(&[30.0, 30.0], &t, &diss, &SweepOptions::default()).is_err());
    }
}
