//! Per-intensity g² fits followed by one global fit of the photophysical
//! limits, rates and cross section across the whole series.
//!
//! ```text
//! cargo run --release --example global_fit [-- <manifest.json>]
//! ```

use std::path::PathBuf;

use colorcenter::correlator::io::read_curve;
use colorcenter::fitkit::io::SeriesManifest;
use colorcenter::fitkit::{
    fit_g2, global_photophysics_fit, G2FitOptions, GlobalFitOptions, SeriesPoint,
};

fn main() -> colorcenter::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/g2_series/manifest.json")
        });
    let manifest = SeriesManifest::read(&path)?;

    println!("  I (kW/cm^2)   tau1 (ns)          tau2 (ns)           c");
    let mut series = Vec::new();
    for e in &manifest.entries {
        let Some(intensity) = e.intensity_kw_cm2 else {
            eprintln!("skipping {}: no intensity", e.file.display());
            continue;
        };
        let fit = fit_g2(&read_curve(&e.file)?, &G2FitOptions::default())?;
        println!(
            "{intensity:>13.1} {:>7.3} +- {:<6.3} {:>8.3} +- {:<7.3} {:>6.3} +- {:.3}",
            fit.value("tau1"),
            fit.sigma("tau1"),
            fit.value("tau2"),
            fit.sigma("tau2"),
            fit.value("c"),
            fit.sigma("c")
        );
        series.push(SeriesPoint { intensity, fit });
    }

    let global = global_photophysics_fit(&series, &GlobalFitOptions::default())?;
    println!("\n{global}");
    for name in ["k_eg", "k_es", "k_sg"] {
        let (k, s) = (global.value(name), global.sigma(name));
        println!("1/{name} = {:.2} +- {:.2} ns", 1.0 / k, s / (k * k));
    }
    Ok(())
}
