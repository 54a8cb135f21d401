//! TOML description of a simulation run.
//!
//! ```toml
//! d_mhz = 35.0
//! omega1_mhz = [1.0, 1.5, 2.0]   # or a single number
//! duration_us = 1.5
//! alpha_per_ms = 7.0
//! beta_per_us = 2.5
//! delta_per_ms = 185.0
//!
//! [grid]
//! start_mhz = 15.0
//! stop_mhz = 90.0
//! step_mhz = 0.25
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ContrastObservable, DissipatorOrdering, DissipatorSet, DriveConfig, EvolveOptions, SweepOptions,
};
use crate::error::{from_toml, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub start_mhz: f64,
    pub stop_mhz: f64,
    pub step_mhz: f64,
}

impl FrequencyGrid {
    /// Inclusive of both ends when the step divides the span.
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.step_mhz > 0.0 && self.stop_mhz > self.start_mhz) {
            return Err(Error::domain("grid needs step > 0 and stop > start"));
        }
        let n = ((self.stop_mhz - self.start_mhz) / self.step_mhz + 1e-9).floor() as usize;
        Ok((0..=n)
            .map(|i| self.start_mhz + self.step_mhz * i as f64)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(v) => v,
    })
}

fn default_duration() -> f64 {
    1.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub d_mhz: f64,
    #[serde(deserialize_with = "one_or_many")]
    pub omega1_mhz: Vec<f64>,
    #[serde(default = "default_duration")]
    pub duration_us: f64,
    pub alpha_per_ms: f64,
    pub beta_per_us: f64,
    pub delta_per_ms: f64,
    #[serde(default)]
    pub ordering: DissipatorOrdering,
    #[serde(default)]
    pub observable: ContrastObservable,
    pub grid: FrequencyGrid,
    #[serde(default)]
    pub rtol: Option<f64>,
    #[serde(default)]
    pub atol: Option<f64>,
}

impl SimConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: SimConfig = from_toml(text, origin)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.omega1_mhz.is_empty() {
            return Err(Error::Configuration("omega1_mhz is empty".into()));
        }
        for &w in &self.omega1_mhz {
            self.drive(w).validate()?;
        }
        self.dissipators().validate()?;
        self.grid.points()?;
        Ok(())
    }

    pub fn dissipators(&self) -> DissipatorSet {
        DissipatorSet {
            alpha_per_ms: self.alpha_per_ms,
            beta_per_us: self.beta_per_us,
            delta_per_ms: self.delta_per_ms,
            ordering: self.ordering,
        }
    }

    /// Drive template for one coupling; the frequency is set per point.
    pub fn drive(&self, omega1_mhz: f64) -> DriveConfig {
        DriveConfig {
            omega1_mhz,
            omega_mhz: 0.0,
            d_mhz: self.d_mhz,
            duration_us: self.duration_us,
        }
    }

    pub fn sweep_options(&self) -> SweepOptions {
        let mut evolve = EvolveOptions::default();
        if let Some(r) = self.rtol {
            evolve.rtol = r;
        }
        if let Some(a) = self.atol {
            evolve.atol = a;
        }
        // the non-canonical sandwich does not conserve trace by construction
        evolve.check_invariants = self.ordering == DissipatorOrdering::Canonical;
        SweepOptions {
            observable: self.observable,
            normalize: true,
            evolve,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str =
        "d_mhz = 35.0\nomega1_mhz = 2.0\nalpha_per_ms = 7\nbeta_per_us = 2.5\ndelta_per_ms = 185\n\
                        [grid]\nstart_mhz = 15\nstop_mhz = 90\nstep_mhz = 0.5\n";

    #[test]
    fn parses_scalar_or_list_coupling() {
        let c = SimConfig::from_toml_str(TEXT, Path::new("x.toml")).unwrap();
        assert_eq!(c.omega1_mhz, vec![2.0]);
        assert_eq!(c.duration_us, 1.5);
        let pts = c.grid.points().unwrap();
        assert_eq!((pts.len(), pts[0], *pts.last().unwrap()), (151, 15.0, 90.0));
        let c = SimConfig::from_toml_str(&TEXT.replace("2.0", "[1.0, 2.0]"), Path::new("x.toml"))
            .unwrap();
        assert_eq!(c.omega1_mhz, vec![1.0, 2.0]);
    }

    #[test]
    fn parse_errors_carry_position() {
        let bad = TEXT.replace("beta_per_us = 2.5", "beta_per_us = \"fast\"");
        match SimConfig::from_toml_str(&bad, Path::new("x.toml")) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (4, 15)),
            other => panic!("{other:?}"),
        }
        let neg = TEXT.replace("omega1_mhz = 2.0", "omega1_mhz = -1.0");
        assert!(matches!(
            SimConfig::from_toml_str(&neg, Path::new("x.toml")),
            Err(Error::Domain(_))
        ));
    }
}
