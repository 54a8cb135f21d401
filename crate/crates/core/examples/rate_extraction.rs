//! Kinetic rates and absorption cross section from measured g² limits.
//!
//! ```text
//! cargo run --example rate_extraction
//! ```

use colorcenter::cli::DEFAULT_KAPPA;
use colorcenter::ratemodel::{
    g2_parameters, rates_from_limits_3level, rates_from_limits_4level, stationary_state,
    PhotophysicsLimits,
};

fn main() -> colorcenter::Result<()> {
    let r3 = rates_from_limits_3level(&PhotophysicsLimits::three_level(7.5, 17.2, 6.0))?;
    println!(
        "3-level: 1/k_eg {:.2} ns, 1/k_es {:.2} ns, 1/k_sg {:.2} ns",
        1.0 / r3.k_eg,
        1.0 / r3.k_es,
        1.0 / r3.k_sg
    );
    println!(
        "         sigma = {:.3e} cm^2 at I0 = 44 kW/cm^2, 785 nm",
        r3.cross_section(44.0, 785.0)?
    );

    let r4 = rates_from_limits_4level(&PhotophysicsLimits::four_level(6.7, 204.4, 14.9, 6.3))?;
    println!(
        "4-level: 1/k_eg {:.2} ns, 1/k_es {:.2} ns, 1/k_sg0 {:.1} ns, 1/k_sg_inf {:.2} ns",
        1.0 / r4.k_eg,
        1.0 / r4.k_es,
        1.0 / r4.k_sg0,
        1.0 / r4.k_sg_inf
    );
    println!(
        "         sigma = {:.3e} cm^2",
        r4.cross_section(44.0, 785.0)?
    );

    // forward direction: g² shape and populations along the pump axis
    println!("\n  I (kW/cm^2)   tau1 (ns)   tau2 (ns)      c      n_e");
    for intensity in [2.6, 10.0, 44.0, 135.0, 378.0] {
        let rc = r3.with_pump(DEFAULT_KAPPA * intensity)?;
        let (t1, t2, c) = g2_parameters(&rc)?;
        let n = stationary_state(&rc)?;
        println!(
            "{intensity:>13.1} {t1:>11.3} {t2:>11.3} {c:>7.3} {:>8.4}",
            n.n_e
        );
    }
    Ok(())
}
