//! Simulated two-detector photon stream through the correlator: raw
//! coincidences, normalization, background correction and rebinning.
//!
//! ```text
//! cargo run --release --example photon_stream_correlator
//! ```

use colorcenter::cli::DEFAULT_KAPPA;
use colorcenter::correlator::io::{read_time_tags, write_time_tags};
use colorcenter::correlator::{
    background_correct, normalize, rebin, signal_fraction, CoincidenceAccumulator,
};
use colorcenter::ratemodel::{
    rates_from_limits_3level, PhotophysicsLimits, StreamConfig, StreamSimulator,
};

fn main() -> colorcenter::Result<()> {
    let rc = rates_from_limits_3level(&PhotophysicsLimits::three_level(7.5, 17.2, 6.0))?
        .with_pump(DEFAULT_KAPPA * 44.0)?;
    let mut cfg = StreamConfig::new(1.0, 0.05, 11);
    cfg.split = 0.6;
    cfg.background_rates = [20000.0, 15000.0];
    let sim = StreamSimulator::new(rc, cfg)?;

    // streaming path, no tag buffer
    let mut acc = CoincidenceAccumulator::new(972, 300.0)?;
    let stats = sim.run(|ch, t| acc.push(ch, t));
    let hist = acc.finish(cfg.duration_s);
    println!(
        "{} coincidences from {} detected photons",
        hist.total_counts(),
        stats.detected_signal[0]
            + stats.detected_signal[1]
            + stats.background[0]
            + stats.background[1]
    );

    // buffered path through a tag file gives the same stream
    let (stream, _) = sim.collect();
    let dir = std::env::temp_dir().join("colorcenter_example");
    std::fs::create_dir_all(&dir).map_err(|e| colorcenter::Error::io(&dir, e))?;
    let tags = dir.join("tags.ttag");
    write_time_tags(&tags, &stream)?;
    let back = read_time_tags(&tags)?;
    println!(
        "round-tripped {} tags through {}",
        back.len(),
        tags.display()
    );

    let curve = normalize(&hist)?;
    let emitter = stream.rates()[0] + stream.rates()[1] - 35000.0;
    let rho = signal_fraction(emitter, 35000.0);
    let corrected = background_correct(&curve, rho)?;
    let coarse = rebin(&corrected, 3888)?;

    let at = |c: &colorcenter::correlator::CorrelationCurve, t: f64| {
        c.window_mean(t, 4.0).map_or(f64::NAN, |w| w.0)
    };
    println!("rho = {rho:.3}");
    println!(
        "g2(0)   raw {:.3}  corrected {:.3}  rebinned {:.3}",
        at(&curve, 0.0),
        at(&corrected, 0.0),
        at(&coarse, 0.0)
    );
    println!(
        "g2(25)  raw {:.3}  corrected {:.3}",
        at(&curve, 25.0),
        at(&corrected, 25.0)
    );
    println!(
        "g2(250) raw {:.3}  corrected {:.3}",
        at(&curve, 250.0),
        at(&corrected, 250.0)
    );
    Ok(())
}
