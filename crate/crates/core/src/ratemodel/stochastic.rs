//! Exact event-by-event simulation of a single emitter observed by two
//! detectors behind a beam splitter.
//!
//! The emitter is a continuous-time Markov chain on `{G, E, S}` driven by the
//! same rates as the generator: each visit to a state lasts an exponential
//! time at the total exit rate, and the next state is drawn in proportion to
//! the individual rates. Every `E → G` transition emits one photon, which is
//! detected with probability `detection_efficiency` and routed to detector 0
//! with probability `split`. Independent Poisson background is added per
//! detector. Nothing is time-discretized.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::{stationary_state, RateCoefficients};
use crate::error::{Error, Result};

/// Two-detector time tags. Timestamps in ps, duration in s.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhotonStream {
    pub timestamps: Vec<u64>,
    pub channels: Vec<u8>,
    pub duration_s: f64,
}

impl PhotonStream {
    pub fn new(timestamps: Vec<u64>, channels: Vec<u8>, duration_s: f64) -> Result<Self> {
        let s = Self {
            timestamps,
            channels,
            duration_s,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.timestamps.len() != self.channels.len() {
            return Err(Error::domain("timestamps and channels differ in length"));
        }
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return Err(Error::domain(format!(
                "invalid duration {}",
                self.duration_s
            )));
        }
        let end_ps = self.duration_s * 1e12;
        if let Some(i) = self.timestamps.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::domain(format!(
                "timestamps decrease at index {}",
                i + 1
            )));
        }
        if let Some(&last) = self.timestamps.last() {
            if last as f64 >= end_ps {
                return Err(Error::domain(format!(
                    "timestamp {last} ps is not inside the acquisition of {} s",
                    self.duration_s
                )));
            }
        }
        if let Some(&ch) = self.channels.iter().find(|&&c| c > 1) {
            return Err(Error::domain(format!("channel {ch} is not 0 or 1")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn channel_counts(&self) -> [u64; 2] {
        let mut n = [0u64; 2];
        for &c in &self.channels {
            n[c as usize] += 1;
        }
        n
    }

    /// Per-detector count rates in counts/s.
    pub fn rates(&self) -> [f64; 2] {
        let n = self.channel_counts();
        if self.duration_s > 0.0 {
            [n[0] as f64 / self.duration_s, n[1] as f64 / self.duration_s]
        } else {
            [0.0, 0.0]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub duration_s: f64,
    pub detection_efficiency: f64,
    /// Poisson background per detector, counts/s.
    pub background_rates: [f64; 2],
    /// Fraction of detected emitter photons routed to detector 0.
    pub split: f64,
    /// Extra path delay of detector 1 in ps; negative values delay detector 0.
    #[serde(default)]
    pub channel_offset_ps: i64,
    pub seed: u64,
}

impl StreamConfig {
    pub fn new(duration_s: f64, detection_efficiency: f64, seed: u64) -> Self {
        Self {
            duration_s,
            detection_efficiency,
            background_rates: [0.0, 0.0],
            split: 0.5,
            channel_offset_ps: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::domain(format!(
                "duration must be positive, got {}",
                self.duration_s
            )));
        }
        if !(self.detection_efficiency >= 0.0 && self.detection_efficiency <= 1.0) {
            return Err(Error::domain(format!(
                "detection efficiency must lie in [0, 1], got {}",
                self.detection_efficiency
            )));
        }
        if !(0.0..=1.0).contains(&self.split) {
            return Err(Error::domain(format!(
                "split must lie in [0, 1], got {}",
                self.split
            )));
        }
        for r in self.background_rates {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::domain(format!(
                    "background rate must be nonnegative, got {r}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationStats {
    pub transitions: u64,
    /// `E → G` transitions inside the acquisition window.
    pub emitted: u64,
    pub detected_signal: [u64; 2],
    pub background: [u64; 2],
    pub duration_s: f64,
}

impl SimulationStats {
    pub fn emission_rate_per_ns(&self) -> f64 {
        self.emitted as f64 / (self.duration_s * 1e9)
    }
}

/// Simulated time in ps, split into an exact integer part and a fraction.
#[derive(Debug, Clone, Copy)]
struct Clock {
    whole: u64,
    frac: f64,
}

impl Clock {
    fn advance(&mut self, dt_ps: f64) {
        self.frac += dt_ps;
        let w = self.frac.floor();
        self.whole += w as u64;
        self.frac -= w;
    }
}

pub struct StreamSimulator {
    rates: RateCoefficients,
    cfg: StreamConfig,
}

const GROUND: usize = 0;
const EXCITED: usize = 1;
const SHELF: usize = 2;

impl StreamSimulator {
    pub fn new(rates: RateCoefficients, cfg: StreamConfig) -> Result<Self> {
        rates.validate()?;
        cfg.validate()?;
        Ok(Self { rates, cfg })
    }

    /// Runs the simulation, handing every detection event to `sink` as
    /// `(channel, timestamp_ps)` in nondecreasing time order.
    pub fn run<F: FnMut(u8, u64)>(&self, mut sink: F) -> SimulationStats {
        let rc = &self.rates;
        let cfg = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let end_ps = (cfg.duration_s * 1e12).floor() as u64;
        let offsets = if cfg.channel_offset_ps >= 0 {
            [0u64, cfg.channel_offset_ps as u64]
        } else {
            [cfg.channel_offset_ps.unsigned_abs(), 0u64]
        };
        let exit_rate_ps = [rc.k_ge * 1e-3, (rc.k_eg + rc.k_es) * 1e-3, rc.k_sg * 1e-3];
        let emit_prob = rc.k_eg / (rc.k_eg + rc.k_es);
        let bg_rate_ps = [
            cfg.background_rates[0] * 1e-12,
            cfg.background_rates[1] * 1e-12,
        ];

        let mut stats = SimulationStats {
            duration_s: cfg.duration_s,
            ..Default::default()
        };
        let mut pending: BinaryHeap<Reverse<(u64, u8)>> = BinaryHeap::new();
        let mut next_bg = [f64::INFINITY; 2];
        for ch in 0..2 {
            if bg_rate_ps[ch] > 0.0 {
                next_bg[ch] = rng.sample::<f64, _>(Exp1) / bg_rate_ps[ch];
            }
        }

        // start from the stationary distribution so no transient is recorded
        let st = stationary_state(rc).expect("validated rates");
        let u: f64 = rng.gen();
        let mut state = if u < st.n_g {
            GROUND
        } else if u < st.n_g + st.n_e {
            EXCITED
        } else {
            SHELF
        };
        let mut clock = Clock {
            whole: 0,
            frac: 0.0,
        };

        loop {
            let dwell = rng.sample::<f64, _>(Exp1) / exit_rate_ps[state];
            clock.advance(dwell);
            let now = clock.whole;
            if now >= end_ps {
                break;
            }
            stats.transitions += 1;
            state = match state {
                GROUND => EXCITED,
                SHELF => GROUND,
                _ => {
                    if rng.gen::<f64>() < emit_prob {
                        stats.emitted += 1;
                        if cfg.detection_efficiency > 0.0
                            && rng.gen::<f64>() < cfg.detection_efficiency
                        {
                            let ch = if rng.gen::<f64>() < cfg.split {
                                0u8
                            } else {
                                1u8
                            };
                            let t = now + offsets[ch as usize];
                            if t < end_ps {
                                stats.detected_signal[ch as usize] += 1;
                                pending.push(Reverse((t, ch)));
                            }
                        }
                        GROUND
                    } else {
                        SHELF
                    }
                }
            };
            self.release_background(
                &mut rng,
                &mut next_bg,
                bg_rate_ps,
                now as f64,
                &mut pending,
                &mut stats,
            );
            while let Some(&Reverse((t, ch))) = pending.peek() {
                if t > now {
                    break;
                }
                pending.pop();
                sink(ch, t);
            }
        }
        self.release_background(
            &mut rng,
            &mut next_bg,
            bg_rate_ps,
            end_ps as f64,
            &mut pending,
            &mut stats,
        );
        while let Some(Reverse((t, ch))) = pending.pop() {
            if t < end_ps {
                sink(ch, t);
            }
        }
        stats
    }

    fn release_background(
        &self,
        rng: &mut ChaCha8Rng,
        next_bg: &mut [f64; 2],
        bg_rate_ps: [f64; 2],
        until_ps: f64,
        pending: &mut BinaryHeap<Reverse<(u64, u8)>>,
        stats: &mut SimulationStats,
    ) {
        let end_ps = self.cfg.duration_s * 1e12;
        for ch in 0..2 {
            while next_bg[ch] <= until_ps && next_bg[ch] < end_ps {
                pending.push(Reverse((next_bg[ch] as u64, ch as u8)));
                stats.background[ch] += 1;
                next_bg[ch] += rng.sample::<f64, _>(Exp1) / bg_rate_ps[ch];
            }
        }
    }

    pub fn collect(&self) -> (PhotonStream, SimulationStats) {
        let mut timestamps = Vec::new();
        let mut channels = Vec::new();
        let stats = self.run(|ch, t| {
            timestamps.push(t);
            channels.push(ch);
        });
        (
            PhotonStream {
                timestamps,
                channels,
                duration_s: self.cfg.duration_s,
            },
            stats,
        )
    }
}

/// Simulates a full photon stream in memory.
pub fn simulate_photon_stream(rc: &RateCoefficients, cfg: &StreamConfig) -> Result<PhotonStream> {
    Ok(StreamSimulator::new(*rc, *cfg)?.collect().0)
}
