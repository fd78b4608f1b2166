//! Versioned TOML experiment configuration. Every section is optional and
//! falls back to defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::excitation::{ExcitationProfile, NoiseSpec, RngStream};
use crate::inference::prior::PriorBox;
use crate::inference::simulators::VehicleSimulator;
use crate::inference::train::TrainConfig;
use crate::observability::FisherSettings;
use crate::simulator::SimConfig;
use crate::summaries::DEFAULT_LAGS;
use crate::vehicle::VehicleConstants;

pub const SCHEMA_VERSION: u32 = 1;

/// Noise settings; the stiffness mixtures are generated from `mixture_seed`
/// so they stay fixed however the experiment seed changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSettings {
    /// Mixture means and stds are drawn within this fraction of nominal.
    pub stiffness_rel: f64,
    pub mixture_components: usize,
    pub mixture_seed: u64,
    pub rel_std_rotational: f64,
    pub rel_std_accel: f64,
    pub v0_min: f64,
    pub v0_max: f64,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        Self {
            stiffness_rel: 0.05,
            mixture_components: NoiseSpec::MIXTURE_COMPONENTS,
            mixture_seed: 0,
            rel_std_rotational: 0.05,
            rel_std_accel: 0.10,
            v0_min: 10.0,
            v0_max: 11.0,
        }
    }
}

impl NoiseSettings {
    pub fn spec(&self, constants: &VehicleConstants) -> NoiseSpec {
        let mut spec = NoiseSpec::generate(
            constants,
            self.stiffness_rel,
            self.mixture_components,
            RngStream::new(self.mixture_seed, 0).derive("noise-mixture", 0),
        );
        spec.rel_std_rotational = self.rel_std_rotational;
        spec.rel_std_accel = self.rel_std_accel;
        spec.v0_min = self.v0_min;
        spec.v0_max = self.v0_max;
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSettings {
    pub sample_rate: f64,
    /// RK4 steps per output sample.
    pub substeps: usize,
    /// Autocorrelation lags in samples.
    pub lags: Vec<usize>,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self { sample_rate: 200.0, substeps: 5, lags: DEFAULT_LAGS.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub output_dir: String,
    pub vehicle: VehicleConstants,
    pub prior: PriorBox,
    pub excitation: ExcitationProfile,
    pub noise: NoiseSettings,
    pub sim: SimSettings,
    pub train: TrainConfig,
    pub fisher: FisherSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            output_dir: "out".into(),
            vehicle: VehicleConstants::default(),
            prior: PriorBox::vehicle_default(),
            excitation: ExcitationProfile::default(),
            noise: NoiseSettings::default(),
            sim: SimSettings::default(),
            train: TrainConfig::default(),
            fisher: FisherSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of the canonical TOML serialization. The output directory is
    /// left out: it does not affect any result.
    pub fn digest(&self) -> Result<String> {
        let canonical = Self { output_dir: String::new(), ..self.clone() };
        Ok(hex::encode(Sha256::digest(canonical.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.prior.validate()?;
        if self.prior.dim() != crate::vehicle::IdentifiedParams::DIM {
            return Err(Error::Config("prior must cover the six identified parameters".into()));
        }
        if self.noise.mixture_components == 0 || !(self.noise.stiffness_rel >= 0.0) {
            return Err(Error::Config("noise mixture settings out of range".into()));
        }
        if self.sim.lags.is_empty() || self.sim.lags.contains(&0) {
            return Err(Error::Config("sim.lags must be non-empty and positive".into()));
        }
        self.sim_config().validate()?;
        self.train.validate()?;
        self.fisher.validate()?;
        Ok(())
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            sample_rate: self.sim.sample_rate,
            duration: self.excitation.duration,
            substeps: self.sim.substeps,
            constants: self.vehicle,
            profile: self.excitation,
            noise: self.noise.spec(&self.vehicle),
        }
    }

    pub fn simulator(&self) -> VehicleSimulator {
        VehicleSimulator { config: self.sim_config(), lags: self.sim.lags.clone() }
    }

    pub fn master_stream(&self) -> RngStream {
        RngStream::new(self.seed, 0)
    }
}
