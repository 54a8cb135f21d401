//! Fits `g²(τ) = 1 − (1+c)e^{−|τ−τ₀|/τ₁} + c·e^{−|τ−τ₀|/τ₂}` to one measured curve.
//!
//! ```text
//! cargo run --release --example g2_fit [-- <curve.csv>]
//! ```

use std::path::PathBuf;

use colorcenter::correlator::io::read_curve;
use colorcenter::correlator::{background_correct, rebin};
use colorcenter::fitkit::{fit_g2, G2FitOptions};

fn main() -> colorcenter::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/g2_series/g2_44kw.csv")
        });
    let curve = read_curve(&path)?;
    println!(
        "{}: {} bins of {} ps",
        path.display(),
        curve.len(),
        curve.bin_width_ps
    );

    let fit = fit_g2(&curve, &G2FitOptions::default())?;
    println!("{fit}");

    // a visibility below 1 measures how far the dip is from zero
    let free = fit_g2(
        &curve,
        &G2FitOptions {
            free_visibility: true,
            ..Default::default()
        },
    )?;
    println!("{free}");

    // coarser bins and a hypothetical 10% background
    let coarse = rebin(&curve, 4 * curve.bin_width_ps)?;
    let fit = fit_g2(&coarse, &G2FitOptions::default())?;
    println!(
        "rebinned to {} ps: tau1 {:.3} +- {:.3} ns",
        coarse.bin_width_ps,
        fit.value("tau1"),
        fit.sigma("tau1")
    );
    let corrected = background_correct(&curve, 0.9)?;
    let fit = fit_g2(&corrected, &G2FitOptions::default())?;
    println!(
        "background-corrected (rho = 0.9): c {:.3} +- {:.3}",
        fit.value("c"),
        fit.sigma("c")
    );
    Ok(())
}
