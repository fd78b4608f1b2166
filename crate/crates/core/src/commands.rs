//! Pipeline stages behind the command-line tool. Each stage is a function of
//! the configuration, explicit arguments and the configured seed, and writes
//! its artifacts into an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{pairplot_export, posterior_table, PosteriorTable};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::inference::abc::rejection_abc;
use crate::inference::simulators::{Normalized, SummarySimulator};
use crate::inference::snpe::{pilot_normalizer, run_snpe, MdnPosterior, RoundReport};
use crate::io::{read_samples, read_trajectory, write_samples, write_trajectory, TrajectoryMeta, TRAJECTORY_FORMAT_VERSION};
use crate::observability::{fisher_matrix, FisherReport};
use crate::simulator::{simulate, TrajectoryRecord};
use crate::summaries::{summarize_channels, Normalizer};
use crate::vehicle::IdentifiedParams;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const NORMALIZER_FILE: &str = "normalizer.json";
pub const MODEL_FILE: &str = "model.json";
pub const POSTERIOR_SAMPLES_FILE: &str = "posterior_samples.csv";
pub const REPORT_FILE: &str = "report.json";
pub const ABC_SAMPLES_FILE: &str = "abc_samples.csv";
pub const ABC_REPORT_FILE: &str = "abc_report.json";
pub const FISHER_FILE: &str = "fisher.json";
pub const TABLE_FILE: &str = "posterior_table.csv";

/// Parameter choice for commands that need one.
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaChoice {
    Nominal,
    /// Draw from the prior.
    Sample,
    Fixed(Vec<f64>),
}

impl ThetaChoice {
    /// `"nominal"`, `"sample"` or six comma-separated numbers.
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "nominal" => Ok(Self::Nominal),
            "sample" => Ok(Self::Sample),
            other => {
                let v: Vec<f64> = other
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Config(format!("cannot parse theta {other:?}: {e}")))?;
                if v.len() != IdentifiedParams::DIM {
                    return Err(Error::Config(format!("theta needs {} values, got {}", IdentifiedParams::DIM, v.len())));
                }
                Ok(Self::Fixed(v))
            }
        }
    }
}

fn ensure_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct SimulateOutput {
    pub record: TrajectoryRecord,
    pub meta: TrajectoryMeta,
    pub path: PathBuf,
}

/// Simulate one observation and write `trajectory.csv` plus its sidecar.
pub fn cmd_simulate(cfg: &ExperimentConfig, theta: &ThetaChoice, out: &Path) -> Result<SimulateOutput> {
    ensure_dir(out)?;
    let master = cfg.master_stream();
    let (values, source) = match theta {
        ThetaChoice::Nominal => (IdentifiedParams::nominal().to_array().to_vec(), "fixed"),
        ThetaChoice::Fixed(v) => (v.clone(), "fixed"),
        ThetaChoice::Sample => (cfg.prior.sample(&mut master.derive("truth", 0).rng()), "sampled"),
    };
    let params = IdentifiedParams::from_slice(&values)?;
    let stream = master.derive("observation", 0);
    let record = simulate(&params, stream, &cfg.sim_config());
    if !record.valid {
        return Err(Error::Simulation(format!(
            "observation run failed: {}",
            record.abort_reason.as_deref().unwrap_or("unknown")
        )));
    }
    let meta = TrajectoryMeta {
        format_version: TRAJECTORY_FORMAT_VERSION,
        channels: crate::vehicle::Measurement::CHANNELS.iter().map(|s| s.to_string()).collect(),
        samples: record.len(),
        sample_rate: cfg.sim.sample_rate,
        theta: params,
        theta_source: source.into(),
        stream,
        config_digest: cfg.digest()?,
        valid: record.valid,
        abort_reason: record.abort_reason.clone(),
    };
    let path = out.join(TRAJECTORY_FILE);
    write_trajectory(&path, &record, &meta)?;
    log::info!("wrote {} ({} samples)", path.display(), record.len());
    Ok(SimulateOutput { record, meta, path })
}

/// Fit and write the summary normalizer from prior-predictive simulations.
pub fn cmd_pilot(cfg: &ExperimentConfig, out: &Path) -> Result<Normalizer> {
    ensure_dir(out)?;
    let pilot = pilot_normalizer(&cfg.simulator(), &cfg.prior, cfg.train.pilot_sims, cfg.master_stream())?;
    let path = out.join(NORMALIZER_FILE);
    fs::write(&path, pilot.normalizer.to_json()? + "\n")?;
    log::info!("wrote {} ({} invalid of {})", path.display(), pilot.invalid, pilot.simulations);
    Ok(pilot.normalizer)
}

fn load_or_fit_normalizer(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<Normalizer> {
    match path {
        Some(p) => Normalizer::from_json(&fs::read_to_string(p)?),
        None => Ok(pilot_normalizer(&cfg.simulator(), &cfg.prior, cfg.train.pilot_sims, cfg.master_stream())?.normalizer),
    }
}

/// Raw summary of an observation file and the SHA-256 of its bytes.
pub fn observation_summary(cfg: &ExperimentConfig, path: &Path) -> Result<(Vec<f64>, String, Option<TrajectoryMeta>)> {
    let bytes = fs::read(path)?;
    let (record, meta) = read_trajectory(path)?;
    let channels: Vec<&[f64]> = record.channels.iter().map(|c| c.as_slice()).collect();
    let summary = summarize_channels(&channels, &cfg.sim.lags).map_err(|e| Error::Format(e.to_string()))?;
    Ok((summary.values, sha256_hex(&bytes), meta))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferReport {
    pub seed: u64,
    pub config_digest: String,
    pub observation_sha256: String,
    pub normalizer_digest: String,
    pub rounds: Vec<RoundReport>,
    pub posterior_samples: usize,
    pub final_acceptance: Option<f64>,
    pub table: Option<PosteriorTable>,
    pub error: Option<String>,
}

pub struct InferOutput {
    pub samples: Vec<Vec<f64>>,
    pub report: InferReport,
}

/// Full sequential inference for an observation file. The model file is
/// rewritten after every round and the report is written even on failure.
pub fn cmd_infer(
    cfg: &ExperimentConfig,
    observation: &Path,
    normalizer: Option<&Path>,
    out: &Path,
) -> Result<InferOutput> {
    ensure_dir(out)?;
    let (x_obs, obs_hash, meta) = observation_summary(cfg, observation)?;
    let norm = load_or_fit_normalizer(cfg, normalizer)?;
    let mut report = InferReport {
        seed: cfg.seed,
        config_digest: cfg.digest()?,
        observation_sha256: obs_hash,
        normalizer_digest: norm.digest(),
        rounds: Vec::new(),
        posterior_samples: 0,
        final_acceptance: None,
        table: None,
        error: None,
    };
    let model_path = out.join(MODEL_FILE);
    let mut save_error = None;
    let mut rounds = Vec::new();
    let result = run_snpe(
        &cfg.simulator(),
        &cfg.prior,
        &x_obs,
        Some(norm),
        &cfg.train,
        cfg.master_stream(),
        &mut |r: &RoundReport, post: &MdnPosterior| {
            rounds.push(r.clone());
            if let Err(e) = post.to_json().and_then(|t| Ok(fs::write(&model_path, t + "\n")?)) {
                save_error.get_or_insert(e);
            }
        },
    );
    report.rounds = rounds;
    if let Some(e) = save_error {
        return Err(e);
    }
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            report.error = Some(e.to_string());
            write_json(&out.join(REPORT_FILE), &report)?;
            return Err(e);
        }
    };
    write_samples(&out.join(POSTERIOR_SAMPLES_FILE), &cfg.prior.names, &result.samples)?;
    let truth = meta.map(|m| m.theta.to_array().to_vec());
    report.table = Some(posterior_table(&result.samples, truth.as_deref(), &cfg.prior)?);
    report.posterior_samples = result.samples.len();
    report.final_acceptance = Some(result.final_acceptance);
    write_json(&out.join(REPORT_FILE), &report)?;
    Ok(InferOutput { samples: result.samples, report })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbcReport {
    pub seed: u64,
    pub n_sims: usize,
    pub accept_fraction: f64,
    pub accepted: usize,
    pub epsilon: f64,
    pub invalid: usize,
    pub observation_sha256: String,
}

/// Rejection ABC for an observation file; writes `abc_samples.csv`.
pub fn cmd_abc(
    cfg: &ExperimentConfig,
    observation: &Path,
    normalizer: Option<&Path>,
    n_sims: usize,
    accept_fraction: f64,
    out: &Path,
) -> Result<(Vec<Vec<f64>>, AbcReport)> {
    ensure_dir(out)?;
    let (x_obs, obs_hash, _) = observation_summary(cfg, observation)?;
    let norm = load_or_fit_normalizer(cfg, normalizer)?;
    let x = norm.apply(&x_obs);
    let sim = Normalized { inner: cfg.simulator(), normalizer: norm };
    let r = rejection_abc(&sim, &cfg.prior, &x, n_sims, accept_fraction, cfg.master_stream())
        .map_err(|e| match e {
            Error::InsufficientData(m) => Error::Simulation(m),
            other => other,
        })?;
    write_samples(&out.join(ABC_SAMPLES_FILE), &cfg.prior.names, &r.samples)?;
    let report = AbcReport {
        seed: cfg.seed,
        n_sims,
        accept_fraction,
        accepted: r.samples.len(),
        epsilon: r.epsilon,
        invalid: r.invalid,
        observation_sha256: obs_hash,
    };
    write_json(&out.join(ABC_REPORT_FILE), &report)?;
    Ok((r.samples, report))
}

/// Fisher information at `theta` in normalized summary space; writes `fisher.json`.
pub fn cmd_fisher(
    cfg: &ExperimentConfig,
    theta: &ThetaChoice,
    normalizer: Option<&Path>,
    out: &Path,
) -> Result<FisherReport> {
    ensure_dir(out)?;
    let theta = match theta {
        ThetaChoice::Nominal => IdentifiedParams::nominal().to_array().to_vec(),
        ThetaChoice::Fixed(v) => v.clone(),
        ThetaChoice::Sample => cfg.prior.sample(&mut cfg.master_stream().derive("truth", 0).rng()),
    };
    let norm = load_or_fit_normalizer(cfg, normalizer)?;
    let sim = Normalized { inner: cfg.simulator(), normalizer: norm };
    debug_assert_eq!(sim.param_dim(), theta.len());
    let report = fisher_matrix(
        &sim,
        &cfg.prior.names,
        &theta,
        &cfg.fisher.fd_steps(&cfg.prior),
        &cfg.fisher,
        Some(&cfg.prior),
        cfg.master_stream().derive("fisher", 0),
    )?;
    write_json(&out.join(FISHER_FILE), &report)?;
    Ok(report)
}

/// Table and corner plot for a samples file. `truth` falls back to the
/// parameters recorded in a trajectory sidecar when one is given.
pub fn cmd_analyze(
    cfg: &ExperimentConfig,
    samples: &Path,
    truth: Option<Vec<f64>>,
    out: &Path,
) -> Result<PosteriorTable> {
    ensure_dir(out)?;
    let (names, rows) = read_samples(samples)?;
    if names != cfg.prior.names {
        return Err(Error::Format(format!("sample columns {names:?} do not match prior {:?}", cfg.prior.names)));
    }
    if let Some(t) = &truth {
        if t.len() != names.len() {
            return Err(Error::Config(format!("truth needs {} values", names.len())));
        }
    }
    let table = posterior_table(&rows, truth.as_deref(), &cfg.prior).map_err(|e| match e {
        Error::InsufficientData(m) => Error::Format(m),
        other => other,
    })?;
    fs::write(out.join(TABLE_FILE), table.to_csv())?;
    pairplot_export(&rows, truth.as_deref(), &cfg.prior, out)?;
    Ok(table)
}

/// Ground truth from a trajectory sidecar, if present.
pub fn truth_from_observation(path: &Path) -> Result<Option<Vec<f64>>> {
    let side = crate::io::sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    let meta: TrajectoryMeta = serde_json::from_str(&fs::read_to_string(side)?)?;
    Ok(Some(meta.theta.to_array().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_choice_parsing() {
        assert_eq!(ThetaChoice::parse("nominal").unwrap(), ThetaChoice::Nominal);
        assert_eq!(ThetaChoice::parse("sample").unwrap(), ThetaChoice::Sample);
        assert_eq!(
            ThetaChoice::parse("1.2,0.4,0,0,0.1,-0.1").unwrap(),
            ThetaChoice::Fixed(vec![1.2, 0.4, 0.0, 0.0, 0.1, -0.1])
        );
        assert!(ThetaChoice::parse("1,2").is_err());
        assert!(ThetaChoice::parse("a,b,c,d,e,f").is_err());
    }
}
