//! Regenerates the synthetic datasets under `data/`.
//!
//! ```text
//! cargo run --release --example generate_fixtures [-- <out_dir>]
//! ```
//!
//! Every file is a deterministic function of the seeds below.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use colorcenter::cli::DEFAULT_KAPPA;
use colorcenter::correlator::{coincidence_histogram, io::write_curve, normalize};
use colorcenter::fitkit::io::{write_saturation_csv, SeriesEntry, SeriesManifest};
use colorcenter::fitkit::{OdmrSpectrum, SaturationPoint};
use colorcenter::ratemodel::{
    rates_from_limits_3level, simulate_photon_stream, stationary_state, PhotophysicsLimits,
    StreamConfig,
};

const G2_INTENSITIES: [f64; 6] = [2.6, 10.0, 44.0, 135.0, 250.0, 378.0];
const RF_POWERS_W: [f64; 7] = [0.1, 0.25, 0.5, 1.0, 1.8, 2.6, 4.0];

fn g2_series(dir: &Path) -> colorcenter::Result<()> {
    fs::create_dir_all(dir).map_err(|e| colorcenter::Error::Configuration(e.to_string()))?;
    let rates = rates_from_limits_3level(&PhotophysicsLimits::three_level(7.5, 17.2, 6.0))?;
    let mut manifest = SeriesManifest::default();
    for (k, &intensity) in G2_INTENSITIES.iter().enumerate() {
        let rc = rates.with_pump(DEFAULT_KAPPA * intensity)?;
        // 10⁶ detected photons at unit efficiency
        let rate = stationary_state(&rc)?.n_e * rc.k_eg * 1e9;
        let mut cfg = StreamConfig::new(1e6 / rate, 1.0, 1000 + k as u64);
        cfg.split = 0.6;
        let stream = simulate_photon_stream(&rc, &cfg)?;
        let curve = normalize(&coincidence_histogram(&stream, 972, 600.0)?)?;
        let name = format!("g2_{intensity}kw.csv");
        write_curve(&dir.join(&name), &curve)?;
        manifest.entries.push(SeriesEntry {
            file: name.into(),
            intensity_kw_cm2: Some(intensity),
            rf_power_w: None,
            omega1_mhz: None,
            n_peaks: None,
        });
        println!("{:>6} kW/cm^2: {} photons", intensity, stream.len());
    }
    manifest.write(&dir.join("manifest.json"))
}

fn saturation(path: &Path) -> colorcenter::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let points: Vec<SaturationPoint> = [
        2.6, 5.0, 10.0, 20.0, 30.0, 44.0, 60.0, 80.0, 100.0, 135.0, 180.0, 250.0, 300.0, 378.0,
    ]
    .iter()
    .map(|&i: &f64| {
        let s = 7800.0 * i / (44.0 + i);
        let b = 15.9 * i + 309.0;
        SaturationPoint {
            intensity: i,
            signal: s * (1.0 + 0.03 * unit.sample(&mut rng)),
            background: b * (1.0 + 0.03 * unit.sample(&mut rng)),
            signal_sigma: Some(0.03 * s),
            background_sigma: Some(0.03 * b),
        }
    })
    .collect();
    write_saturation_csv(path, &points)
}

/// Two Lorentzians whose amplitudes and widths follow the RF power laws.
fn odmr_series(dir: &Path) -> colorcenter::Result<()> {
    fs::create_dir_all(dir).map_err(|e| colorcenter::Error::Configuration(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = 0.03;
    let unit = Normal::new(0.0, noise).unwrap();
    let freqs: Vec<f64> = (0..=300).map(|i| 0.5 * i as f64).collect();
    let lorentz = |f: f64, f0: f64, w: f64, a: f64| {
        a * (0.5 * w).powi(2) / ((f - f0).powi(2) + (0.5 * w).powi(2))
    };
    let mut manifest = SeriesManifest::default();
    for &p in &RF_POWERS_W {
        let a1 = 3.51 * p.sqrt() / (0.59 + p.sqrt());
        let a2 = 1.2 * p / (0.6 + p);
        let w1 = 10.0 + 35.9 * p.sqrt();
        let w2 = 3.3 + 5.0 * p.sqrt();
        let contrast: Vec<f64> = freqs
            .iter()
            .map(|&f| lorentz(f, 72.8, w1, a1) + lorentz(f, 36.4, w2, a2) + unit.sample(&mut rng))
            .collect();
        let mut s = OdmrSpectrum::new(freqs.clone(), contrast, vec![noise; freqs.len()])?;
        s.rf_power_w = Some(p);
        let name = format!("odmr_{p}w.csv");
        s.write_csv(&dir.join(&name))?;
        manifest.entries.push(SeriesEntry {
            file: name.into(),
            intensity_kw_cm2: None,
            rf_power_w: Some(p),
            omega1_mhz: None,
            n_peaks: Some(2),
        });
    }
    manifest.write(&dir.join("manifest.json"))
}

fn main() -> colorcenter::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("data"));
    g2_series(&out.join("g2_series"))?;
    saturation(&out.join("saturation.csv"))?;
    odmr_series(&out.join("odmr_series"))?;
    println!("fixtures written to {}", out.display());
    Ok(())
}
