//! Summary statistics of a trajectory and their pilot-run normalization.
//!
//! Layout for `C` channels and lags `L`: channel means, log variances,
//! autocorrelations (channel-major, lag-minor), then lag-0 cross-correlations
//! over channel pairs in lexicographic order. Five channels with three lags
//! give 5 + 5 + 15 + 10 = 35 entries.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::simulator::TrajectoryRecord;
use crate::vehicle::Measurement;

/// Floor added to variances before taking the logarithm.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Default autocorrelation lags in samples (0.05, 0.1 and 0.2 s at 200 Hz).
pub const DEFAULT_LAGS: [usize; 3] = [10, 20, 40];

/// Length of the default summary vector.
pub const SUMMARY_LEN: usize = 35;

pub const NORMALIZER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryVector {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl SummaryVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn summary_len(channels: usize, lags: usize) -> usize {
    2 * channels + channels * lags + channels * (channels - 1) / 2
}

/// Human-readable name of every summary entry, in layout order.
pub fn summary_layout(channel_names: &[&str], lags: &[usize]) -> Vec<String> {
    let mut names = Vec::new();
    names.extend(channel_names.iter().map(|c| format!("mean({c})")));
    names.extend(channel_names.iter().map(|c| format!("logvar({c})")));
    for c in channel_names {
        names.extend(lags.iter().map(|l| format!("acf({c},{l})")));
    }
    for i in 0..channel_names.len() {
        for j in i + 1..channel_names.len() {
            names.push(format!("xcorr({},{})", channel_names[i], channel_names[j]));
        }
    }
    names
}

pub fn default_layout() -> Vec<String> {
    summary_layout(&Measurement::CHANNELS, &DEFAULT_LAGS)
}

struct ChannelMoments {
    mean: f64,
    var: f64,
}

fn moments(x: &[f64]) -> ChannelMoments {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    ChannelMoments { mean, var }
}

fn degenerate(m: &ChannelMoments) -> bool {
    !(m.var > VARIANCE_FLOOR)
}

/// Summary statistics of equal-length channels.
pub fn summarize_channels(channels: &[&[f64]], lags: &[usize]) -> Result<SummaryVector> {
    let n = channels.first().map_or(0, |c| c.len());
    if channels.is_empty() || channels.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidParameter("channels must be non-empty and of equal length".into()));
    }
    if lags.iter().any(|&l| l >= n) || n < 2 {
        return Err(Error::InvalidParameter(format!("series of length {n} too short for lags {lags:?}")));
    }
    let stats: Vec<ChannelMoments> = channels.iter().map(|c| moments(c)).collect();
    let mut out = Vec::with_capacity(summary_len(channels.len(), lags.len()));
    out.extend(stats.iter().map(|m| m.mean));
    out.extend(stats.iter().map(|m| (m.var + VARIANCE_FLOOR).ln()));
    for (c, m) in channels.iter().zip(&stats) {
        for &lag in lags {
            if degenerate(m) {
                out.push(0.0);
                continue;
            }
            let cov: f64 = c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| (a - m.mean) * (b - m.mean)).sum();
            out.push(cov / (n as f64 * m.var));
        }
    }
    for i in 0..channels.len() {
        for j in i + 1..channels.len() {
            let (mi, mj) = (&stats[i], &stats[j]);
            if degenerate(mi) || degenerate(mj) {
                out.push(0.0);
                continue;
            }
            let cov: f64 = channels[i]
                .iter()
                .zip(channels[j])
                .map(|(a, b)| (a - mi.mean) * (b - mj.mean))
                .sum::<f64>()
                / n as f64;
            out.push(cov / (mi.var * mj.var).sqrt());
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Simulation("non-finite summary statistic".into()));
    }
    Ok(SummaryVector { values: out, normalized: false })
}

/// Summary of a valid trajectory with the given autocorrelation lags.
pub fn summarize_with_lags(record: &TrajectoryRecord, lags: &[usize]) -> Result<SummaryVector> {
    if !record.valid {
        return Err(Error::InvalidParameter("cannot summarize an invalid trajectory".into()));
    }
    let channels: Vec<&[f64]> = record.channels.iter().map(|c| c.as_slice()).collect();
    summarize_channels(&channels, lags)
}

pub fn summarize(record: &TrajectoryRecord) -> Result<SummaryVector> {
    summarize_with_lags(record, &DEFAULT_LAGS)
}

/// Per-coordinate mean and standard deviation from pilot simulations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub version: u32,
    pub layout: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub pilot_count: usize,
}

impl Normalizer {
    /// Identity transform of dimension `dim`.
    pub fn identity(dim: usize) -> Self {
        Self {
            version: NORMALIZER_VERSION,
            layout: (0..dim).map(|i| format!("x{i}")).collect(),
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            pilot_count: 2,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let n: Normalizer = serde_json::from_str(text)?;
        if n.version != NORMALIZER_VERSION {
            return Err(Error::Format(format!("unsupported normalizer version {}", n.version)));
        }
        if n.mean.len() != n.std.len() || n.layout.len() != n.mean.len() {
            return Err(Error::Format("normalizer arrays have inconsistent lengths".into()));
        }
        Ok(n)
    }

    /// SHA-256 of the serialized normalizer, used to tie models to their inputs.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("normalizer serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Fit a normalizer: sample mean and (n - 1) sample standard deviation.
pub fn fit_normalizer(summaries: &[Vec<f64>], layout: Vec<String>) -> Result<Normalizer> {
    if summaries.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "normalizer needs at least 2 pilot summaries, got {}",
            summaries.len()
        )));
    }
    let dim = summaries[0].len();
    if summaries.iter().any(|s| s.len() != dim) || layout.len() != dim {
        return Err(Error::InvalidParameter("pilot summaries have inconsistent lengths".into()));
    }
    let n = summaries.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in summaries {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for s in summaries {
        for ((acc, v), m) in var.iter_mut().zip(s).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|v| (v / (n - 1.0)).sqrt()).collect();
    Ok(Normalizer { version: NORMALIZER_VERSION, layout, mean, std, pilot_count: summaries.len() })
}

pub fn normalize(s: &SummaryVector, n: &Normalizer) -> Result<SummaryVector> {
    if s.normalized {
        return Err(Error::InvalidParameter("summary is already normalized".into()));
    }
    if s.len() != n.dim() {
        return Err(Error::InvalidParameter(format!(
            "summary has {} entries but normalizer expects {}",
            s.len(),
            n.dim()
        )));
    }
    Ok(SummaryVector { values: n.apply(&s.values), normalized: true })
}
