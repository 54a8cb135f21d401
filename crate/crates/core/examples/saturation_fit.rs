//! Saturation curve `S(I) = S_max·I/(I₀+I)` fitted jointly with a linear
//! background `B(I) = m·I + b`.
//!
//! ```text
//! cargo run --example saturation_fit [-- <saturation.csv>]
//! ```

use std::path::PathBuf;

use colorcenter::fitkit::io::read_saturation_csv;
use colorcenter::fitkit::{fit_saturation, signal_fraction_at};

fn main() -> colorcenter::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/saturation.csv"));
    let points = read_saturation_csv(&path)?;
    let fit = fit_saturation(&points)?;
    println!("{fit}");

    // ρ = S/(S+B) feeds the g² background correction
    println!("  I (kW/cm^2)    rho");
    for p in &points {
        println!(
            "{:>13.1} {:>7.3}",
            p.intensity,
            signal_fraction_at(&fit, p.intensity)
        );
    }
    Ok(())
}
