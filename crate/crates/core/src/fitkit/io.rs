//! FitResult JSON and series manifests.
//!
//! A series manifest lists data files with their acquisition conditions;
//! relative paths are resolved against the manifest's directory:
//!
//! ```json
//! { "entries": [ { "file": "g2_2.6.csv", "intensity_kw_cm2": 2.6 },
//!                { "file": "odmr_0.1W.csv", "rf_power_w": 0.1 } ] }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::{FitResult, SaturationPoint};
use crate::correlator::io::read_columns_csv;
use crate::error::{Error, Result};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn write_fit(path: &Path, fit: &FitResult) -> Result<()> {
    write_json(path, fit)
}

pub fn read_fit(path: &Path) -> Result<FitResult> {
    read_json(path)
}

const SATURATION_HEADER: [&str; 5] = [
    "intensity_kw_cm2",
    "signal_cps",
    "background_cps",
    "signal_sigma",
    "background_sigma",
];

/// `intensity_kw_cm2,signal_cps,background_cps`, one row per laser
/// intensity, optionally followed by `signal_sigma,background_sigma`.
pub fn read_saturation_csv(path: &Path) -> Result<Vec<SaturationPoint>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("");
    if header.split(',').count() >= 5 {
        let [i, s, b, ss, sb] = read_columns_csv(path, SATURATION_HEADER)?;
        return Ok((0..i.len())
            .map(|k| SaturationPoint {
                intensity: i[k],
                signal: s[k],
                background: b[k],
                signal_sigma: Some(ss[k]),
                background_sigma: Some(sb[k]),
            })
            .collect());
    }
    let [i, s, b] = read_columns_csv(
        path,
        [
            SATURATION_HEADER[0],
            SATURATION_HEADER[1],
            SATURATION_HEADER[2],
        ],
    )?;
    Ok((0..i.len())
        .map(|k| SaturationPoint::new(i[k], s[k], b[k]))
        .collect())
}

/// Writes the sigma columns only when every point carries both.
pub fn write_saturation_csv(path: &Path, points: &[SaturationPoint]) -> Result<()> {
    let sigmas = points
        .iter()
        .all(|p| p.signal_sigma.is_some() && p.background_sigma.is_some());
    let n = if sigmas { 5 } else { 3 };
    let mut text = SATURATION_HEADER[..n].join(",");
    text.push('\n');
    for p in points {
        text.push_str(&format!(
            "{:e},{:e},{:e}",
            p.intensity, p.signal, p.background
        ));
        if let (true, Some(ss), Some(sb)) = (sigmas, p.signal_sigma, p.background_sigma) {
            text.push_str(&format!(",{ss:e},{sb:e}"));
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesEntry {
    pub file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity_kw_cm2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rf_power_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega1_mhz: Option<f64>,
    /// Peak count for Lorentzian decomposition of this spectrum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_peaks: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SeriesManifest {
    pub entries: Vec<SeriesEntry>,
}

impl SeriesManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let mut m: SeriesManifest = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut m.entries {
            if e.file.is_relative() {
                e.file = base.join(&e.file);
            }
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}
