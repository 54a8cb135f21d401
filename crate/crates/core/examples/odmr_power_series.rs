//! Lorentzian decomposition of measured ODMR spectra at several RF powers,
//! then amplitude and linewidth power laws and the dephasing time.
//!
//! ```text
//! cargo run --release --example odmr_power_series [-- <manifest.json>]
//! ```

use std::path::PathBuf;

use colorcenter::fitkit::io::SeriesManifest;
use colorcenter::fitkit::{
    dephasing_time_ns, fit_amplitude_vs_power, fit_linewidth_vs_power, fit_lorentzians,
    LorentzianOptions, OdmrSpectrum, PeakTable,
};

fn main() -> colorcenter::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/odmr_series/manifest.json")
        });
    let manifest = SeriesManifest::read(&path)?;

    let (mut power, mut peaks) = (Vec::new(), Vec::new());
    let opts = LorentzianOptions {
        centers: Some(vec![72.0, 36.0]),
        ..Default::default()
    };
    println!("  P (W)   center  FWHM  amplitude (per peak)");
    for e in &manifest.entries {
        let spec = OdmrSpectrum::read_csv(&e.file)?;
        let Some(p) = e.rf_power_w.or(spec.rf_power_w) else {
            eprintln!("skipping {}: no RF power", e.file.display());
            continue;
        };
        let fit = fit_lorentzians(&spec, e.n_peaks.unwrap_or(2), &opts)?;
        let t = PeakTable::from_fit(&fit);
        let row: Vec<String> = (0..t.centers.len())
            .map(|k| {
                format!(
                    "{:6.2} {:5.2} {:5.3}",
                    t.centers[k], t.fwhm[k], t.amplitudes[k]
                )
            })
            .collect();
        println!("{p:>7.2}   {}", row.join(" | "));
        power.push(p);
        peaks.push(fit);
    }

    // peak 1 is the 1-photon line near 2D, peak 2 the 2-photon line near D
    for (k, exponent) in [(1, 1u32), (2, 2)] {
        let col = |p: &str| -> (Vec<f64>, Vec<f64>) {
            let name = format!("{p}_{k}");
            peaks
                .iter()
                .map(|f| (f.value(&name), f.sigma(&name)))
                .unzip()
        };
        let (amp, amp_s) = col("amplitude");
        let (lw, lw_s) = col("fwhm");
        let fa = fit_amplitude_vs_power(&power, &amp, &amp_s, exponent)?;
        let fl = fit_linewidth_vs_power(&power, &lw, &lw_s)?;
        println!("\npeak {k}, amplitude ~ P^{exponent}/2 saturation:\n{fa}");
        println!("peak {k}, linewidth ~ sqrt(P):\n{fl}");
        let (t2, s) = dephasing_time_ns(fl.value("lw0"), fl.sigma("lw0"));
        println!("T2* = {t2:.1} +- {s:.1} ns");
    }
    Ok(())
}
