//! Power broadening of the simulated 1- and 2-photon lines: the FWHM of
//! each against the RF coupling, fitted with `LW = LW₀ + a₁·Ω₁`.
//!
//! ```text
//! cargo run --release --example linewidth_scan
//! ```
//!
//! Sweeps run in parallel; set `RAYON_NUM_THREADS` to limit the workers.

use colorcenter::spinsim::{linewidth_scan, DissipatorSet, DriveConfig, SweepOptions};

fn main() -> colorcenter::Result<()> {
    let diss = DissipatorSet::new(7.0, 2.5, 185.0);
    let template = DriveConfig {
        omega1_mhz: 0.0,
        omega_mhz: 0.0,
        d_mhz: 35.0,
        duration_us: 1.5,
    };
    let freqs: Vec<f64> = (0..=75).map(|i| 15.0 + i as f64).collect();
    let scan = linewidth_scan(
        &[2.0, 4.0, 6.0, 8.0],
        &freqs,
        &template,
        &diss,
        &SweepOptions::default(),
    )?;

    println!("Omega1 (MHz)  1-photon FWHM  2-photon FWHM");
    let show = |w: Option<f64>| w.map_or("-".to_string(), |w| format!("{w:.2}"));
    for r in &scan.rows {
        println!(
            "{:>12.1} {:>14} {:>14}  {}",
            r.omega1_mhz,
            show(r.one_photon_fwhm),
            show(r.two_photon_fwhm),
            r.flag.as_deref().unwrap_or("")
        );
    }
    println!("\n1-photon:\n{}", scan.one_photon);
    println!("2-photon:\n{}", scan.two_photon);
    Ok(())
}
