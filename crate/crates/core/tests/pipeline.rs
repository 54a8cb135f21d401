//! Cross-module checks: simulated streams through the correlator and
//! simulated spectra through the ODMR fits.

use colorcenter::cli::DEFAULT_KAPPA;
use colorcenter::correlator::{
    background_correct, normalize, signal_fraction, CoincidenceAccumulator, CorrelationCurve,
};
use colorcenter::fitkit::fit_linewidth_vs_power;
use colorcenter::ratemodel::{
    rates_from_limits_3level, PhotophysicsLimits, RateCoefficients, StreamConfig, StreamSimulator,
};
use colorcenter::spinsim::{
    decompose_spectrum, odmr_sweep, DissipatorSet, DriveConfig, SweepOptions,
};

fn emitter() -> RateCoefficients {
    rates_from_limits_3level(&PhotophysicsLimits::three_level(7.5, 17.2, 6.0))
        .unwrap()
        .with_pump(DEFAULT_KAPPA * 44.0)
        .unwrap()
}

fn correlate(rc: RateCoefficients, cfg: StreamConfig) -> (CorrelationCurve, [f64; 2]) {
    let mut acc = CoincidenceAccumulator::new(972, 300.0).unwrap();
    let stats = StreamSimulator::new(rc, cfg)
        .unwrap()
        .run(|ch, t| acc.push(ch, t));
    let signal = [0, 1].map(|i| stats.detected_signal[i] as f64 / cfg.duration_s);
    (normalize(&acc.finish(cfg.duration_s)).unwrap(), signal)
}

#[test]
fn uncorrelated_background_is_flat_with_calibrated_errors() {
    // a negligible emitter leaves two independent Poisson streams; ~150
    // counts per bin so that √counts errors are trustworthy
    let mut cfg = StreamConfig::new(2.0, 1e-7, 21);
    cfg.background_rates = [300_000.0, 250_000.0];
    let (curve, _) = correlate(emitter(), cfg);
    let pulls: Vec<f64> = curve
        .values
        .iter()
        .zip(&curve.sigma)
        .map(|(v, s)| (v - 1.0) / s)
        .collect();
    let n = pulls.len() as f64;
    let chi2 = pulls.iter().map(|p| p * p).sum::<f64>() / n;
    let one = pulls.iter().filter(|p| p.abs() < 1.0).count() as f64 / n;
    let two = pulls.iter().filter(|p| p.abs() < 2.0).count() as f64 / n;
    assert!((chi2 - 1.0).abs() < 0.15, "chi2/n {chi2}");
    assert!((one - 0.683).abs() < 0.06, "within 1 sigma {one}");
    assert!((two - 0.954).abs() < 0.03, "within 2 sigma {two}");
}

#[test]
fn background_correction_matches_clean_acquisition() {
    let rc = emitter();
    let clean_cfg = StreamConfig {
        split: 0.6,
        ..StreamConfig::new(1.0, 0.05, 31)
    };
    let (clean, _) = correlate(rc, clean_cfg);

    let noisy_cfg = StreamConfig {
        background_rates: [20_000.0, 15_000.0],
        ..StreamConfig::new(1.0, 0.05, 32)
    };
    let noisy_cfg = StreamConfig {
        split: 0.6,
        ..noisy_cfg
    };
    let (noisy, signal) = correlate(rc, noisy_cfg);
    let rho = signal_fraction(signal[0] + signal[1], 35_000.0);
    assert!(rho < 0.95);
    let corrected = background_correct(&noisy, rho).unwrap();

    for (center, half) in [(0.0, 3.0), (25.0, 5.0), (60.0, 10.0), (200.0, 50.0)] {
        let (a, sa) = clean.window_mean(center, half).unwrap();
        let (b, sb) = corrected.window_mean(center, half).unwrap();
        let (r, _) = noisy.window_mean(center, half).unwrap();
        let z = (a - b) / (sa * sa + sb * sb).sqrt();
        assert!(
            z.abs() < 4.0,
            "window {center} ns: clean {a:.3} corrected {b:.3} raw {r:.3}"
        );
    }
    // the raw dip is visibly filled by the background
    let raw0 = noisy.window_mean(0.0, 3.0).unwrap().0;
    let cor0 = corrected.window_mean(0.0, 3.0).unwrap().0;
    assert!(raw0 > cor0);
}

fn spectrum_fwhm(omega1: f64, step: f64) -> (f64, f64) {
    let diss = DissipatorSet::new(7.0, 2.5, 185.0);
    let drive = DriveConfig {
        omega1_mhz: omega1,
        omega_mhz: 0.0,
        d_mhz: 35.0,
        duration_us: 1.5,
    };
    let n = (75.0 / step).round() as usize;
    let freqs: Vec<f64> = (0..=n).map(|i| 15.0 + step * i as f64).collect();
    let spec = odmr_sweep(&freqs, &drive, &diss, &SweepOptions::default()).unwrap();
    let row = decompose_spectrum(omega1, &spec, 35.0);
    assert!(row.flag.is_none(), "{:?}", row.flag);
    (row.one_photon_fwhm.unwrap(), row.two_photon_fwhm.unwrap())
}

#[test]
fn simulated_linewidths_are_grid_independent_and_broaden_with_power() {
    let coarse: Vec<(f64, f64)> = [2.0, 4.0, 6.0]
        .iter()
        .map(|&w| spectrum_fwhm(w, 1.0))
        .collect();

    // halving the grid step barely moves the 1-photon width
    let (fine, _) = spectrum_fwhm(4.0, 0.5);
    assert!(
        (fine / coarse[1].0 - 1.0).abs() < 0.02,
        "{fine} vs {}",
        coarse[1].0
    );

    // power P ∝ Ω₁²; the 1-photon line broadens faster than the 2-photon line
    let power: Vec<f64> = [2.0f64, 4.0, 6.0].iter().map(|w| w * w).collect();
    let (one, two): (Vec<f64>, Vec<f64>) = coarse.into_iter().unzip();
    let sigma = vec![0.1; 3];
    let f1 = fit_linewidth_vs_power(&power, &one, &sigma).unwrap();
    let f2 = fit_linewidth_vs_power(&power, &two, &sigma).unwrap();
    assert!(
        f1.value("a") > f2.value("a"),
        "{} vs {}",
        f1.value("a"),
        f2.value("a")
    );
    assert!(one.windows(2).all(|w| w[1] > w[0]));
}
