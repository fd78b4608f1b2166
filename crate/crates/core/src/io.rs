//! Plain-text file formats: trajectory CSV with a JSON sidecar, and
//! parameter-sample CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::RngStream;
use crate::simulator::TrajectoryRecord;
use crate::vehicle::{IdentifiedParams, Measurement, MEASUREMENT_DIM};

pub const TRAJECTORY_FORMAT_VERSION: u32 = 1;

fn trajectory_header() -> String {
    let mut h = String::from("t");
    for c in Measurement::CHANNELS {
        h.push(',');
        h.push_str(c);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryMeta {
    pub format_version: u32,
    pub channels: Vec<String>,
    pub samples: usize,
    pub sample_rate: f64,
    pub theta: IdentifiedParams,
    /// `"fixed"` or `"sampled"` (drawn from the prior).
    pub theta_source: String,
    pub stream: RngStream,
    pub config_digest: String,
    pub valid: bool,
    pub abort_reason: Option<String>,
}

/// Sidecar path: `trajectory.csv` -> `trajectory.meta.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

pub fn trajectory_csv(record: &TrajectoryRecord) -> String {
    let mut s = trajectory_header();
    s.push('\n');
    for (i, t) in record.t.iter().enumerate() {
        let _ = write!(s, "{t}");
        for c in &record.channels {
            let _ = write!(s, ",{}", c[i]);
        }
        s.push('\n');
    }
    s
}

pub fn write_trajectory(path: &Path, record: &TrajectoryRecord, meta: &TrajectoryMeta) -> Result<()> {
    fs::write(path, trajectory_csv(record))?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

/// Channels of a trajectory CSV: `(t, [a_x, a_y, r, w_f, w_r])`.
pub fn parse_trajectory_csv(text: &str) -> Result<(Vec<f64>, [Vec<f64>; MEASUREMENT_DIM])> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty trajectory file".into()))?;
    if header.trim() != trajectory_header() {
        return Err(Error::Format(format!("unexpected trajectory header {header:?}")));
    }
    let mut t = Vec::new();
    let mut channels: [Vec<f64>; MEASUREMENT_DIM] = Default::default();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals = parse_row(line, MEASUREMENT_DIM + 1, n + 2)?;
        t.push(vals[0]);
        for (c, v) in channels.iter_mut().zip(&vals[1..]) {
            c.push(*v);
        }
    }
    if t.len() < 2 {
        return Err(Error::Format("trajectory needs at least two rows".into()));
    }
    Ok((t, channels))
}

fn parse_row(line: &str, width: usize, line_no: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split(',')
        .map(|f| f.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format(format!("line {line_no}: {e}")))?;
    if vals.len() != width || vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format(format!("line {line_no}: expected {width} finite values")));
    }
    Ok(vals)
}

/// Read a trajectory, using the sidecar (when present) for metadata.
pub fn read_trajectory(path: &Path) -> Result<(TrajectoryRecord, Option<TrajectoryMeta>)> {
    let (t, channels) = parse_trajectory_csv(&fs::read_to_string(path)?)?;
    let side = sidecar_path(path);
    let meta: Option<TrajectoryMeta> = if side.exists() {
        Some(serde_json::from_str(&fs::read_to_string(&side)?)?)
    } else {
        None
    };
    let record = TrajectoryRecord {
        t,
        channels,
        theta: meta.as_ref().map_or(IdentifiedParams::nominal(), |m| m.theta),
        stream: meta.as_ref().map_or(RngStream::new(0, 0), |m| m.stream),
        valid: true,
        abort_reason: None,
    };
    Ok((record, meta))
}

pub fn samples_csv(names: &[String], samples: &[Vec<f64>]) -> String {
    let mut s = names.join(",");
    s.push('\n');
    for row in samples {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn write_samples(path: &Path, names: &[String], samples: &[Vec<f64>]) -> Result<()> {
    fs::write(path, samples_csv(names, samples))?;
    Ok(())
}

pub fn parse_samples_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty samples file".into()))?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    if names.iter().any(|n| n.is_empty()) {
        return Err(Error::Format("samples header has an empty column name".into()));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        rows.push(parse_row(line, names.len(), n + 2)?);
    }
    Ok((names, rows))
}

pub fn read_samples(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    parse_samples_csv(&fs::read_to_string(path)?)
}
