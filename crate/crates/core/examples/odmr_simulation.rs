//! Spin-3/2 ODMR from the driven Lindblad model: one resonant trajectory,
//! a frequency sweep and its Lorentzian decomposition.
//!
//! ```text
//! cargo run --release --example odmr_simulation [-- <omega1_mhz>]
//! ```

use colorcenter::spinsim::{
    decompose_spectrum, evolve, odmr_sweep_with_diagnostics, steady_state, DissipatorSet,
    DriveConfig, EvolveOptions, SweepOptions,
};

fn main() -> colorcenter::Result<()> {
    let omega1: f64 = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(6.0);
    let diss = DissipatorSet::new(7.0, 2.5, 185.0);
    let d = 35.0;

    let rho0 = steady_state(&diss, d)?;
    println!(
        "undriven populations (+3/2, +1/2, -1/2, -3/2): {:.4?}",
        rho0.populations()
    );

    // drive on the 1-photon resonance at 2D
    let drive = DriveConfig {
        omega1_mhz: omega1,
        omega_mhz: 2.0 * d,
        d_mhz: d,
        duration_us: 1.5,
    };
    let ev = evolve(&rho0, &drive, &diss, &EvolveOptions::default())?;
    println!(
        "at {} MHz: P(+-1/2) {:.4} -> {:.4}, {} steps ({} rejected)",
        drive.omega_mhz,
        rho0.half_population(),
        ev.final_state.diagonal()[1].re + ev.final_state.diagonal()[2].re,
        ev.accepted,
        ev.rejected
    );

    let freqs: Vec<f64> = (0..=75).map(|i| 15.0 + i as f64).collect();
    let (spec, diag) =
        odmr_sweep_with_diagnostics(&freqs, &drive, &diss, &SweepOptions::default())?;
    println!(
        "\nsweep at Omega1 = {omega1} MHz, worst trace error {:.1e}, hermiticity {:.1e}, min eigenvalue {:.1e}",
        diag.trace_error, diag.hermiticity, diag.min_eigenvalue
    );
    for (f, c) in spec
        .frequency_mhz
        .iter()
        .zip(&spec.contrast_percent)
        .step_by(3)
    {
        println!(
            "{f:>6.1} MHz {c:>7.2} {}",
            "#".repeat((c / 2.0).max(0.0) as usize)
        );
    }

    let row = decompose_spectrum(omega1, &spec, d);
    if let Some(t) = &row.peaks {
        for k in 0..t.centers.len() {
            println!(
                "peak {:.2} MHz, FWHM {:.2} MHz, amplitude {:.2}",
                t.centers[k], t.fwhm[k], t.amplitudes[k]
            );
        }
    }
    if let Some(flag) = row.flag {
        println!("decomposition: {flag}");
    }
    Ok(())
}
