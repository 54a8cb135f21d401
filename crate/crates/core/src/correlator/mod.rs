//! Start–stop coincidence histograms and normalized g²(τ) curves.
//!
//! Detector 0 starts and detector 1 stops: a pair with `t₁ − t₀ = Δ` lands at
//! delay `+Δ`, and pairs where detector 1 fires first land at negative delay.
//! Bins are edge-aligned at zero delay (`[kW, (k+1)W)`), so the bin centers
//! are symmetric about zero and integer rebinning keeps that symmetry.

pub mod io;

use std::collections::VecDeque;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ratemodel::PhotonStream;

/// Raw start–stop coincidences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub bin_width_ps: u64,
    /// Bin centers in ns.
    pub delays_ns: Vec<f64>,
    pub counts: Vec<u64>,
    pub total_time_s: f64,
    /// Per-detector count rates, counts/s.
    pub rates: [f64; 2],
    /// Set when one of the detectors recorded no events.
    pub empty_channel: bool,
}

impl CoincidenceHistogram {
    /// Adds the counts of another histogram with the same binning, e.g. a
    /// separately processed time segment. Pairs straddling the segment
    /// boundary are not recovered.
    pub fn merge(&mut self, other: &CoincidenceHistogram) -> Result<()> {
        if other.bin_width_ps != self.bin_width_ps || other.counts.len() != self.counts.len() {
            return Err(Error::Configuration(
                "cannot merge histograms with different binning".into(),
            ));
        }
        let t = self.total_time_s + other.total_time_s;
        for ch in 0..2 {
            self.rates[ch] = if t > 0.0 {
                (self.rates[ch] * self.total_time_s + other.rates[ch] * other.total_time_s) / t
            } else {
                0.0
            };
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total_time_s = t;
        self.empty_channel = self.rates.iter().any(|&r| r == 0.0);
        Ok(())
    }

    pub fn total_counts(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Streaming start–stop correlator. Events must arrive in nondecreasing
/// time order; memory is bounded by the number of events per window.
pub struct CoincidenceAccumulator {
    bin_width: u64,
    half_bins: i64,
    window: u64,
    recent: [VecDeque<u64>; 2],
    counts: Vec<u64>,
    events: [u64; 2],
    last: u64,
}

impl CoincidenceAccumulator {
    pub fn new(bin_width_ps: u64, max_delay_ns: f64) -> Result<Self> {
        if bin_width_ps == 0 {
            return Err(Error::domain("bin width must be positive"));
        }
        if !(max_delay_ns.is_finite() && max_delay_ns > 0.0) {
            return Err(Error::domain(format!(
                "max delay must be positive, got {max_delay_ns}"
            )));
        }
        let half_bins = ((max_delay_ns * 1e3) / bin_width_ps as f64)
            .floor()
            .max(1.0) as i64;
        Ok(Self {
            bin_width: bin_width_ps,
            half_bins,
            window: half_bins as u64 * bin_width_ps,
            recent: [VecDeque::new(), VecDeque::new()],
            counts: vec![0; 2 * half_bins as usize],
            events: [0; 2],
            last: 0,
        })
    }

    #[inline]
    fn bin_of(&self, delay: i64) -> Option<usize> {
        let k = delay.div_euclid(self.bin_width as i64);
        if k >= -self.half_bins && k < self.half_bins {
            Some((k + self.half_bins) as usize)
        } else {
            None
        }
    }

    pub fn push(&mut self, channel: u8, t: u64) {
        debug_assert!(t >= self.last, "events out of order");
        self.last = t;
        let ch = channel as usize;
        let horizon = t.saturating_sub(self.window);
        for q in &mut self.recent {
            while q.front().is_some_and(|&old| old < horizon) {
                q.pop_front();
            }
        }
        let other = 1 - ch;
        for i in 0..self.recent[other].len() {
            let t_other = self.recent[other][i];
            let delay = if ch == 1 {
                t as i64 - t_other as i64
            } else {
                t_other as i64 - t as i64
            };
            if let Some(b) = self.bin_of(delay) {
                self.counts[b] += 1;
            }
        }
        self.recent[ch].push_back(t);
        self.events[ch] += 1;
    }

    pub fn finish(self, total_time_s: f64) -> CoincidenceHistogram {
        let w = self.bin_width as f64;
        let delays_ns = (-self.half_bins..self.half_bins)
            .map(|k| (k as f64 + 0.5) * w * 1e-3)
            .collect();
        let rates = if total_time_s > 0.0 {
            [
                self.events[0] as f64 / total_time_s,
                self.events[1] as f64 / total_time_s,
            ]
        } else {
            [0.0, 0.0]
        };
        let empty_channel = self.events.iter().any(|&n| n == 0);
        if empty_channel {
            warn!("coincidence histogram built with an empty detector channel");
        }
        CoincidenceHistogram {
            bin_width_ps: self.bin_width,
            delays_ns,
            counts: self.counts,
            total_time_s,
            rates,
            empty_channel,
        }
    }
}

/// Histogram of start–stop delays within `±max_delay_ns`.
pub fn coincidence_histogram(
    stream: &PhotonStream,
    bin_width_ps: u64,
    max_delay_ns: f64,
) -> Result<CoincidenceHistogram> {
    stream.validate()?;
    let mut acc = CoincidenceAccumulator::new(bin_width_ps, max_delay_ns)?;
    for (&t, &ch) in stream.timestamps.iter().zip(&stream.channels) {
        acc.push(ch, t);
    }
    Ok(acc.finish(stream.duration_s))
}

/// Normalized g² estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub bin_width_ps: u64,
    pub delays_ns: Vec<f64>,
    pub values: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Detection-path delay offset, filled in by a fit.
    pub tau0_ns: Option<f64>,
    pub background_corrected: bool,
    /// ρ = S/(S+B) used for the correction.
    pub signal_to_background: Option<f64>,
    /// Per-detector rates entering the normalization, counts/s.
    pub rates: [f64; 2],
    pub total_time_s: f64,
}

impl CorrelationCurve {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of bins below zero (possible after background correction).
    pub fn negative_bins(&self) -> usize {
        self.values.iter().filter(|&&v| v < 0.0).count()
    }

    /// Plain mean over bins with `|delay − center| ≤ half_width`, with its
    /// standard error. Unweighted on purpose: Poisson weights computed from
    /// the counts themselves bias the mean low at small counts.
    pub fn window_mean(&self, center_ns: f64, half_width_ns: f64) -> Option<(f64, f64)> {
        let mut n = 0usize;
        let mut sum = 0.0;
        let mut var = 0.0;
        for ((&d, &v), &s) in self.delays_ns.iter().zip(&self.values).zip(&self.sigma) {
            if (d - center_ns).abs() <= half_width_ns {
                n += 1;
                sum += v;
                var += s * s;
            }
        }
        (n > 0).then(|| (sum / n as f64, var.sqrt() / n as f64))
    }
}

/// Per-detector rates when only the total rate is known.
pub fn split_total_rate(total: f64, fraction_first: f64) -> [f64; 2] {
    [fraction_first * total, (1.0 - fraction_first) * total]
}

/// Normalizes with the measured per-detector rates.
pub fn normalize(hist: &CoincidenceHistogram) -> Result<CorrelationCurve> {
    normalize_with_rates(hist, hist.rates)
}

/// `g² = counts / (T·W_b·R₁·R₂)`, with Poisson errors `√counts / N_norm`.
/// Empty bins get the one-count error so they keep a finite weight.
pub fn normalize_with_rates(
    hist: &CoincidenceHistogram,
    rates: [f64; 2],
) -> Result<CorrelationCurve> {
    let t = hist.total_time_s;
    if !(t > 0.0) {
        return Err(Error::Normalization(format!(
            "total time must be positive, got {t}"
        )));
    }
    if !(rates[0] > 0.0 && rates[1] > 0.0) {
        return Err(Error::Normalization(format!(
            "detector rates must be positive, got {rates:?}"
        )));
    }
    let n_norm = t * hist.bin_width_ps as f64 * 1e-12 * rates[0] * rates[1];
    let values = hist.counts.iter().map(|&c| c as f64 / n_norm).collect();
    let sigma = hist
        .counts
        .iter()
        .map(|&c| (c.max(1) as f64).sqrt() / n_norm)
        .collect();
    Ok(CorrelationCurve {
        bin_width_ps: hist.bin_width_ps,
        delays_ns: hist.delays_ns.clone(),
        values,
        sigma,
        tau0_ns: None,
        background_corrected: false,
        signal_to_background: None,
        rates,
        total_time_s: t,
    })
}

/// Merges groups of adjacent bins into `target_width_ps`.
///
/// Groups are aligned at zero delay; incomplete groups at the window edges
/// are dropped. Values are averaged, errors added in quadrature.
pub fn rebin(curve: &CorrelationCurve, target_width_ps: u64) -> Result<CorrelationCurve> {
    let w = curve.bin_width_ps;
    if target_width_ps == 0 || target_width_ps % w != 0 {
        return Err(Error::Rebin(format!(
            "target width {target_width_ps} ps is not a multiple of {w} ps"
        )));
    }
    let m = (target_width_ps / w) as i64;
    if m == 1 {
        return Ok(curve.clone());
    }
    let half = (curve.len() / 2) as i64;
    let first_group = (-half).div_euclid(m);
    let first_group = if first_group * m < -half {
        first_group + 1
    } else {
        first_group
    };
    let last_group = half.div_euclid(m) - 1; // groups fully inside [-half, half)
    let mut out = CorrelationCurve {
        bin_width_ps: target_width_ps,
        delays_ns: Vec::new(),
        values: Vec::new(),
        sigma: Vec::new(),
        ..curve.clone()
    };
    for g in first_group..=last_group {
        let start = (g * m + half) as usize;
        let idx = start..start + m as usize;
        let mean = curve.values[idx.clone()].iter().sum::<f64>() / m as f64;
        let err = curve.sigma[idx].iter().map(|s| s * s).sum::<f64>().sqrt() / m as f64;
        out.delays_ns
            .push((g as f64 + 0.5) * target_width_ps as f64 * 1e-3);
        out.values.push(mean);
        out.sigma.push(err);
    }
    Ok(out)
}

/// Removes uncorrelated background: `g²_c = (g² − (1 − ρ²))/ρ²`.
pub fn background_correct(curve: &CorrelationCurve, rho: f64) -> Result<CorrelationCurve> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::domain(format!(
            "signal fraction must lie in (0, 1], got {rho}"
        )));
    }
    let r2 = rho * rho;
    let mut out = curve.clone();
    for (v, s) in out.values.iter_mut().zip(out.sigma.iter_mut()) {
        *v = (*v - (1.0 - r2)) / r2;
        *s /= r2;
    }
    out.background_corrected = true;
    out.signal_to_background = Some(rho);
    let neg = out.negative_bins();
    if neg > 0 {
        warn!("background correction left {neg} negative bins");
    }
    Ok(out)
}

/// Applies [`background_correct`] only when the background share `1 − ρ`
/// exceeds `min_background`; below it the curve is returned unchanged.
pub fn background_correct_above(
    curve: &CorrelationCurve,
    rho: f64,
    min_background: f64,
) -> Result<CorrelationCurve> {
    if 1.0 - rho > min_background {
        background_correct(curve, rho)
    } else {
        Ok(curve.clone())
    }
}

/// ρ = S/(S+B).
pub fn signal_fraction(signal: f64, background: f64) -> f64 {
    signal / (signal + background)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratemodel::{simulate_photon_stream, RateCoefficients, StreamConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// All-pairs histogram, independent of the streaming accumulator.
    fn brute_force(stream: &PhotonStream, w: u64, max_delay_ns: f64) -> Vec<u64> {
        let k = ((max_delay_ns * 1e3) / w as f64).floor().max(1.0) as i64;
        let mut counts = vec![0u64; 2 * k as usize];
        for (i, (&t0, &c0)) in stream.timestamps.iter().zip(&stream.channels).enumerate() {
            for (j, (&t1, &c1)) in stream.timestamps.iter().zip(&stream.channels).enumerate() {
                if i == j || c0 != 0 || c1 != 1 {
                    continue;
                }
                let d = t1 as i64 - t0 as i64;
                let b = d.div_euclid(w as i64);
                if b >= -k && b < k {
                    counts[(b + k) as usize] += 1;
                }
            }
        }
        counts
    }

    fn poisson_stream(rate: f64, duration: f64, seed: u64) -> PhotonStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (rate * duration) as usize;
        let mut ev: Vec<(u64, u8)> = (0..n)
            .map(|_| {
                (
                    (rng.gen::<f64>() * duration * 1e12) as u64,
                    rng.gen_range(0..2u8),
                )
            })
            .collect();
        ev.sort();
        PhotonStream {
            timestamps: ev.iter().map(|e| e.0).collect(),
            channels: ev.iter().map(|e| e.1).collect(),
            duration_s: duration,
        }
    }

    #[test]
    fn empty_stream_gives_zero_histogram() {
        let s = PhotonStream {
            duration_s: 1.0,
            ..Default::default()
        };
        let h = coincidence_histogram(&s, 486, 50.0).unwrap();
        assert!(h.counts.iter().all(|&c| c == 0));
        assert!(h.empty_channel);
        assert!(normalize(&h).is_err());
    }

    #[test]
    fn hand_placed_events_match_enumeration() {
        let s = PhotonStream::new(
            vec![1_000, 1_500, 3_000, 3_000, 7_400, 9_999],
            vec![0, 1, 1, 0, 0, 1],
            1e-6,
        )
        .unwrap();
        let h = coincidence_histogram(&s, 1000, 10.0).unwrap();
        assert_eq!(h.counts, brute_force(&s, 1000, 10.0));
        assert_eq!(h.total_counts(), 9);
    }

    #[test]
    fn bins_are_symmetric() {
        let h = coincidence_histogram(&poisson_stream(1e5, 1e-3, 1), 486, 20.0).unwrap();
        let n = h.delays_ns.len();
        for i in 0..n {
            assert!((h.delays_ns[i] + h.delays_ns[n - 1 - i]).abs() < 1e-9);
        }
        assert!(h
            .delays_ns
            .windows(2)
            .all(|w| (w[1] - w[0] - 0.486).abs() < 1e-9));
    }

    #[test]
    fn uniform_counts_normalize_to_one() {
        // T·W·R₁·R₂ = 1 s · 1 µs · 4000 · 4000 = 16
        let h = CoincidenceHistogram {
            bin_width_ps: 1_000_000,
            delays_ns: vec![-500.0, 500.0],
            counts: vec![16, 16],
            total_time_s: 1.0,
            rates: [4000.0, 4000.0],
            empty_channel: false,
        };
        let c = normalize(&h).unwrap();
        assert!(c.values.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(c.sigma.iter().all(|&s| (s - 0.25).abs() < 1e-12));
        let split = normalize_with_rates(&h, split_total_rate(8000.0, 0.5)).unwrap();
        assert_eq!(split.values, c.values);
    }

    #[test]
    fn poisson_light_is_flat_at_one() {
        let s = poisson_stream(2e5, 0.5, 7);
        let h = coincidence_histogram(&s, 486, 30.0).unwrap();
        let c = rebin(&normalize(&h).unwrap(), 972).unwrap();
        let chi2: f64 = c
            .values
            .iter()
            .zip(&c.sigma)
            .map(|(v, s)| ((v - 1.0) / s).powi(2))
            .sum::<f64>()
            / c.len() as f64;
        let (mean, se) = c.window_mean(0.0, 1e9).unwrap();
        assert!((mean - 1.0).abs() < 3.0 * se, "{mean} ± {se}");
        assert!((0.6..1.5).contains(&chi2), "chi2/bin = {chi2}");
    }

    #[test]
    fn simulated_asymmetric_poisson_rates() {
        // uncorrelated light at R₁ = 600/s, R₂ = 400/s
        let rc = RateCoefficients::new(1e-9, 1.0, 0.0, 1.0).unwrap();
        let mut cfg = StreamConfig::new(2000.0, 0.0, 11);
        cfg.background_rates = [600.0, 400.0];
        let s = simulate_photon_stream(&rc, &cfg).unwrap();
        let h = coincidence_histogram(&s, 100_000, 5_000.0).unwrap();
        let c = normalize(&h).unwrap();
        let (mean, se) = c.window_mean(0.0, 1e9).unwrap();
        assert!((mean - 1.0).abs() < 3.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn total_rate_split_convention() {
        assert_eq!(split_total_rate(1000.0, 0.6), [600.0, 400.0]);
    }

    #[test]
    fn rebin_pairs_and_identity() {
        let s = poisson_stream(3e5, 0.05, 2);
        let h = coincidence_histogram(&s, 486, 19.5).unwrap();
        let c = normalize(&h).unwrap();
        assert_eq!(c.len(), 80);
        assert_eq!(rebin(&c, 486).unwrap(), c);
        let r = rebin(&c, 972).unwrap();
        assert_eq!(r.len(), c.len() / 2);
        let n_norm = h.total_time_s * 486e-12 * h.rates[0] * h.rates[1];
        for (g, v) in r.values.iter().enumerate() {
            let raw = (h.counts[2 * g] + h.counts[2 * g + 1]) as f64 / 2.0;
            assert!((v - raw / n_norm).abs() < 1e-12);
        }
        assert!(r
            .delays_ns
            .iter()
            .zip(r.delays_ns.iter().rev())
            .all(|(a, b)| (a + b).abs() < 1e-9));
        assert!(matches!(rebin(&c, 700), Err(Error::Rebin(_))));
    }

    #[test]
    fn rebin_drops_partial_edge_groups() {
        // 2·20 bins merged by 3: six full groups per side
        let h = CoincidenceHistogram {
            bin_width_ps: 100,
            delays_ns: (-20..20).map(|k| (k as f64 + 0.5) * 0.1).collect(),
            counts: vec![4; 40],
            total_time_s: 1.0,
            rates: [1e5, 1e5],
            empty_channel: false,
        };
        let r = rebin(&normalize(&h).unwrap(), 300).unwrap();
        assert_eq!(r.len(), 12);
        assert!((r.delays_ns[0] + 1.65).abs() < 1e-12);
    }

    #[test]
    fn background_correction() {
        let h = CoincidenceHistogram {
            bin_width_ps: 1000,
            delays_ns: vec![-0.5, 0.5],
            counts: vec![50, 100],
            total_time_s: 1.0,
            rates: [1e5, 1e6],
            empty_channel: false,
        };
        let c = normalize(&h).unwrap();
        assert_eq!(background_correct(&c, 1.0).unwrap().values, c.values);
        let bc = background_correct(&c, 0.8).unwrap();
        assert!(bc.background_corrected);
        assert!((bc.values[1] - 1.0).abs() < 1e-12);
        assert!((bc.values[0] - (0.5 - 0.36) / 0.64).abs() < 1e-12);
        assert!(background_correct(&c, 0.0).is_err());
        let skipped = background_correct_above(&c, 0.99, 0.05).unwrap();
        assert!(!skipped.background_corrected);
    }

    #[test]
    fn merge_segments_adds_counts() {
        let a = coincidence_histogram(&poisson_stream(1e5, 0.01, 3), 486, 10.0).unwrap();
        let b = coincidence_histogram(&poisson_stream(1e5, 0.01, 4), 486, 10.0).unwrap();
        let mut m = a.clone();
        m.merge(&b).unwrap();
        assert_eq!(m.total_counts(), a.total_counts() + b.total_counts());
        assert!((m.total_time_s - 0.02).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn accumulator_matches_all_pairs(
            mut ev in proptest::collection::vec((0u64..200_000, 0u8..2), 0..60),
            w in 50u64..3000,
            max_delay in 1.0f64..40.0,
        ) {
            ev.sort();
            let s = PhotonStream {
                timestamps: ev.iter().map(|e| e.0).collect(),
                channels: ev.iter().map(|e| e.1).collect(),
                duration_s: 1e-6,
            };
            let h = coincidence_histogram(&s, w, max_delay).unwrap();
            prop_assert_eq!(h.counts, brute_force(&s, w, max_delay));
        }
    }
}
