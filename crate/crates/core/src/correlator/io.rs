//! Time-tag and curve files.
//!
//! Time-tag CSV:
//! ```text
//! # total_time_s=12.5
//! channel,timestamp_ps
//! 0,1034
//! 1,2210
//! ```
//! Time-tag binary: magic `TTAG`, u32 version (1), f64 total time in s,
//! u64 event count, then per event a u8 channel and a u64 timestamp in ps.
//! All little-endian.
//!
//! Curves are written as CSV (`delay_ns,g2,sigma`) plus a JSON sidecar with
//! everything else in [`CorrelationCurve`].

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CorrelationCurve;
use crate::error::{Error, Result};
use crate::ratemodel::PhotonStream;

const MAGIC: &[u8; 4] = b"TTAG";
const VERSION: u32 = 1;

fn parse_err(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

pub fn write_time_tags_csv(path: &Path, stream: &PhotonStream) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(path, e);
    writeln!(w, "# total_time_s={:e}", stream.duration_s).map_err(io)?;
    writeln!(w, "channel,timestamp_ps").map_err(io)?;
    for (&t, &c) in stream.timestamps.iter().zip(&stream.channels) {
        writeln!(w, "{c},{t}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_time_tags_csv(path: &Path) -> Result<PhotonStream> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut duration = None;
    let mut header_seen = false;
    let mut timestamps = Vec::new();
    let mut channels = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(meta) = trimmed.strip_prefix('#') {
            if let Some(v) = meta.trim().strip_prefix("total_time_s=") {
                duration = Some(
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| parse_err(path, lineno, 1, format!("total_time_s: {e}")))?,
                );
            }
            continue;
        }
        if !header_seen {
            let cols: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if cols != ["channel", "timestamp_ps"] {
                return Err(parse_err(
                    path,
                    lineno,
                    1,
                    "expected header `channel,timestamp_ps`",
                ));
            }
            header_seen = true;
            continue;
        }
        let mut fields = trimmed.split(',');
        let ch = fields
            .next()
            .ok_or_else(|| parse_err(path, lineno, 1, "missing channel"))?
            .trim()
            .parse::<u8>()
            .map_err(|e| parse_err(path, lineno, 1, format!("channel: {e}")))?;
        let t = fields
            .next()
            .ok_or_else(|| parse_err(path, lineno, 2, "missing column timestamp_ps"))?
            .trim()
            .parse::<u64>()
            .map_err(|e| parse_err(path, lineno, 2, format!("timestamp_ps: {e}")))?;
        if fields.next().is_some() {
            return Err(parse_err(path, lineno, 3, "unexpected extra column"));
        }
        channels.push(ch);
        timestamps.push(t);
    }
    let duration =
        duration.ok_or_else(|| parse_err(path, 1, 1, "missing `# total_time_s=` header"))?;
    PhotonStream::new(timestamps, channels, duration)
}

pub fn write_time_tags_binary(path: &Path, stream: &PhotonStream) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&stream.duration_s.to_le_bytes()).map_err(io)?;
    w.write_all(&(stream.len() as u64).to_le_bytes())
        .map_err(io)?;
    for (&t, &c) in stream.timestamps.iter().zip(&stream.channels) {
        w.write_all(&[c]).map_err(io)?;
        w.write_all(&t.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_time_tags_binary(path: &Path) -> Result<PhotonStream> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let io = |e| Error::io(path, e);
    let mut head = [0u8; 24];
    r.read_exact(&mut head).map_err(io)?;
    if &head[..4] != MAGIC {
        return Err(parse_err(path, 0, 0, "not a TTAG file"));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(parse_err(
            path,
            0,
            4,
            format!("unsupported version {version}"),
        ));
    }
    let duration = f64::from_le_bytes(head[8..16].try_into().unwrap());
    let n = u64::from_le_bytes(head[16..24].try_into().unwrap()) as usize;
    let mut timestamps = Vec::with_capacity(n);
    let mut channels = Vec::with_capacity(n);
    let mut rec = [0u8; 9];
    for i in 0..n {
        r.read_exact(&mut rec)
            .map_err(|_| parse_err(path, i + 1, 0, format!("truncated after {i} of {n} events")))?;
        channels.push(rec[0]);
        timestamps.push(u64::from_le_bytes(rec[1..].try_into().unwrap()));
    }
    PhotonStream::new(timestamps, channels, duration)
}

/// Picks the reader by extension: `.csv` is text, anything else binary.
pub fn read_time_tags(path: &Path) -> Result<PhotonStream> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        read_time_tags_csv(path)
    } else {
        read_time_tags_binary(path)
    }
}

pub fn write_time_tags(path: &Path, stream: &PhotonStream) -> Result<()> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        write_time_tags_csv(path, stream)
    } else {
        write_time_tags_binary(path, stream)
    }
}

/// Sidecar metadata stored next to a curve CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMetadata {
    pub bin_width_ps: u64,
    pub rates: [f64; 2],
    pub total_time_s: f64,
    pub tau0_ns: Option<f64>,
    pub background_corrected: bool,
    pub signal_to_background: Option<f64>,
}

impl CurveMetadata {
    pub fn of(curve: &CorrelationCurve) -> Self {
        Self {
            bin_width_ps: curve.bin_width_ps,
            rates: curve.rates,
            total_time_s: curve.total_time_s,
            tau0_ns: curve.tau0_ns,
            background_corrected: curve.background_corrected,
            signal_to_background: curve.signal_to_background,
        }
    }
}

/// `curve.csv` → `curve.json`.
pub fn metadata_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes the CSV and its JSON sidecar.
pub fn write_curve(path: &Path, curve: &CorrelationCurve) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(path, e);
    writeln!(w, "delay_ns,g2,sigma").map_err(io)?;
    for ((d, v), s) in curve.delays_ns.iter().zip(&curve.values).zip(&curve.sigma) {
        // {:e} round-trips f64 exactly and ignores locale
        writeln!(w, "{d:e},{v:e},{s:e}").map_err(io)?;
    }
    w.flush().map_err(io)?;
    let meta = metadata_path(path);
    let json = serde_json::to_string_pretty(&CurveMetadata::of(curve))
        .map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(&meta, json).map_err(|e| Error::io(&meta, e))
}

/// Reads three numeric columns after a header line, naming the offending
/// line and column on failure.
pub(crate) fn read_columns_csv<const N: usize>(
    path: &Path,
    header: [&str; N],
) -> Result<[Vec<f64>; N]> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cols: [Vec<f64>; N] = std::array::from_fn(|_| Vec::new());
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if !header_seen {
            let names: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            for (j, want) in header.iter().enumerate() {
                if names.get(j) != Some(want) {
                    return Err(parse_err(
                        path,
                        lineno,
                        j + 1,
                        format!("expected column `{want}` in header `{}`", header.join(",")),
                    ));
                }
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        for (j, col) in cols.iter_mut().enumerate() {
            let raw = fields.get(j).ok_or_else(|| {
                parse_err(
                    path,
                    lineno,
                    j + 1,
                    format!("missing column `{}`", header[j]),
                )
            })?;
            let v = raw
                .trim()
                .parse::<f64>()
                .map_err(|e| parse_err(path, lineno, j + 1, format!("`{}`: {e}", header[j])))?;
            col.push(v);
        }
    }
    if !header_seen {
        return Err(parse_err(path, 1, 1, "empty file"));
    }
    Ok(cols)
}

/// Reads a curve CSV; the JSON sidecar is used when present.
pub fn read_curve(path: &Path) -> Result<CorrelationCurve> {
    let [delays_ns, values, sigma] = read_columns_csv(path, ["delay_ns", "g2", "sigma"])?;
    let meta_path = metadata_path(path);
    let meta = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        Some(
            serde_json::from_str::<CurveMetadata>(&text).map_err(|e| Error::Parse {
                path: meta_path.clone(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?,
        )
    } else {
        None
    };
    let bin_width_ps = match &meta {
        Some(m) => m.bin_width_ps,
        None if delays_ns.len() > 1 => ((delays_ns[1] - delays_ns[0]) * 1e3).round() as u64,
        None => 0,
    };
    Ok(CorrelationCurve {
        bin_width_ps,
        delays_ns,
        values,
        sigma,
        tau0_ns: meta.as_ref().and_then(|m| m.tau0_ns),
        background_corrected: meta.as_ref().is_some_and(|m| m.background_corrected),
        signal_to_background: meta.as_ref().and_then(|m| m.signal_to_background),
        rates: meta.as_ref().map_or([0.0; 2], |m| m.rates),
        total_time_s: meta.as_ref().map_or(0.0, |m| m.total_time_s),
    })
}
