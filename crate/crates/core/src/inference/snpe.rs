//! Sequential posterior estimation: pilot normalization, rounds of
//! simulate-and-train, and prior-truncated posterior sampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::RngStream;
use crate::inference::mdn::{Mixture, MdnModel};
use crate::inference::prior::PriorBox;
use crate::inference::simulators::{simulate_many, SummarySimulator};
use crate::inference::train::{train_round, Adam, Dataset, Objective, TrainConfig, TrainingTrace};
use crate::summaries::{fit_normalizer, Normalizer};

pub const MODEL_FILE_VERSION: u32 = 1;

/// Largest tolerated fraction of invalid pilot simulations.
pub const MAX_INVALID_FRACTION: f64 = 0.1;

/// Trained conditional density together with everything needed to use it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdnPosterior {
    pub model: MdnModel,
    pub prior: PriorBox,
    pub normalizer: Normalizer,
}

/// On-disk form of [`MdnPosterior`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    layer_sizes: Vec<usize>,
    components: usize,
    prior: PriorBox,
    normalizer_digest: String,
    normalizer: Normalizer,
    model: MdnModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    /// Rows in physical units, all inside the prior box.
    pub samples: Vec<Vec<f64>>,
    pub proposals: u64,
}

impl PosteriorDraws {
    pub fn acceptance(&self) -> f64 {
        self.samples.len() as f64 / self.proposals.max(1) as f64
    }
}

impl MdnPosterior {
    /// Untruncated log density in physical units at a normalized summary.
    pub fn log_prob(&self, theta: &[f64], x: &[f64]) -> f64 {
        self.model.log_density(&self.prior.to_unit(theta), x) - self.prior.log_volume()
    }

    /// `n` draws restricted to the prior box by rejection. Fails with a
    /// leakage error once `max_proposals` have been made at an acceptance
    /// rate below `min_acceptance`.
    pub fn sample(
        &self,
        x: &[f64],
        n: usize,
        stream: RngStream,
        max_proposals: u64,
        min_acceptance: f64,
    ) -> Result<PosteriorDraws> {
        let mixture = self.model.mixture(x);
        sample_truncated(&mixture, &self.prior, n, stream, max_proposals, min_acceptance)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            version: MODEL_FILE_VERSION,
            layer_sizes: self.model.layer_sizes(),
            components: self.model.components,
            prior: self.prior.clone(),
            normalizer_digest: self.normalizer.digest(),
            normalizer: self.normalizer.clone(),
            model: self.model.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.version != MODEL_FILE_VERSION {
            return Err(Error::Format(format!("unsupported model file version {}", file.version)));
        }
        file.model.validate()?;
        if file.layer_sizes != file.model.layer_sizes() || file.components != file.model.components {
            return Err(Error::Format("model header disagrees with weights".into()));
        }
        if file.normalizer_digest != file.normalizer.digest() {
            return Err(Error::Format("normalizer digest mismatch".into()));
        }
        Ok(Self { model: file.model, prior: file.prior, normalizer: file.normalizer })
    }
}

/// Rejection sampling of a unit-cube mixture restricted to `[0, 1]^d`,
/// mapped to physical units.
pub fn sample_truncated(
    mixture: &Mixture,
    prior: &PriorBox,
    n: usize,
    stream: RngStream,
    max_proposals: u64,
    min_acceptance: f64,
) -> Result<PosteriorDraws> {
    let mut rng = stream.rng();
    let mut samples = Vec::with_capacity(n);
    let mut proposals = 0u64;
    while samples.len() < n {
        let u = mixture.sample(&mut rng);
        proposals += 1;
        if u.iter().all(|v| (0.0..=1.0).contains(v)) {
            samples.push(prior.from_unit(&u));
        }
        if proposals >= max_proposals && (samples.len() as f64) < min_acceptance * proposals as f64 {
            return Err(Error::Leakage { acceptance: samples.len() as f64 / proposals as f64, proposals });
        }
    }
    Ok(PosteriorDraws { samples, proposals })
}

/// Outcome of the pilot run.
#[derive(Debug, Clone, PartialEq)]
pub struct Pilot {
    pub normalizer: Normalizer,
    pub simulations: usize,
    pub invalid: usize,
}

/// Fit the summary normalizer on `n` prior-predictive simulations.
pub fn pilot_normalizer<S: SummarySimulator + ?Sized>(
    sim: &S,
    prior: &PriorBox,
    n: usize,
    stream: RngStream,
) -> Result<Pilot> {
    let mut rng = stream.derive("pilot", 0).rng();
    let thetas: Vec<Vec<f64>> = (0..n).map(|_| prior.sample(&mut rng)).collect();
    let streams: Vec<RngStream> = (0..n as u64).map(|i| stream.derive("pilot", i + 1)).collect();
    let summaries: Vec<Vec<f64>> = simulate_many(sim, &thetas, &streams).into_iter().flatten().collect();
    let invalid = n - summaries.len();
    log::info!("pilot: {n} simulations, {invalid} invalid");
    if invalid as f64 > MAX_INVALID_FRACTION * n as f64 {
        return Err(Error::Simulation(format!("{invalid} of {n} pilot simulations invalid")));
    }
    let normalizer = fit_normalizer(&summaries, sim.summary_names())?;
    Ok(Pilot { normalizer, simulations: n, invalid })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub simulations: usize,
    pub invalid: usize,
    pub proposal_acceptance: f64,
    /// Fraction of proposal mass outside the prior box.
    pub leakage: f64,
    pub dataset_size: usize,
    pub training: TrainingTrace,
}

#[derive(Debug, Clone)]
pub struct SnpeResult {
    pub posterior: MdnPosterior,
    pub samples: Vec<Vec<f64>>,
    pub final_acceptance: f64,
    pub reports: Vec<RoundReport>,
    pub observation: Vec<f64>,
}

/// Run the sequential procedure for a raw observed summary `x_obs`.
///
/// Round 1 trains on prior draws with the likelihood loss; later rounds draw
/// parameters from the current posterior at `x_obs` and retrain on all data
/// gathered so far with the atomic loss. `on_round` sees the posterior after
/// every round, so callers can persist partial results.
pub fn run_snpe<S: SummarySimulator + ?Sized>(
    sim: &S,
    prior: &PriorBox,
    x_obs: &[f64],
    normalizer: Option<Normalizer>,
    config: &TrainConfig,
    stream: RngStream,
    on_round: &mut dyn FnMut(&RoundReport, &MdnPosterior),
) -> Result<SnpeResult> {
    config.validate()?;
    prior.validate()?;
    if prior.dim() != sim.param_dim() {
        return Err(Error::InvalidParameter(format!(
            "prior has {} dimensions, simulator {}",
            prior.dim(),
            sim.param_dim()
        )));
    }
    if x_obs.len() != sim.summary_dim() {
        return Err(Error::InvalidParameter("observation length does not match simulator".into()));
    }
    let normalizer = match normalizer {
        Some(n) => n,
        None => pilot_normalizer(sim, prior, config.pilot_sims, stream)?.normalizer,
    };
    if normalizer.dim() != x_obs.len() {
        return Err(Error::InvalidParameter("normalizer length does not match observation".into()));
    }
    let x = normalizer.apply(x_obs);
    let mut init_rng = stream.derive("init", 0).rng();
    let model = MdnModel::new(x.len(), &config.hidden, prior.dim(), config.components, &mut init_rng);
    let mut posterior = MdnPosterior { model, prior: prior.clone(), normalizer };
    let mut data = Dataset::default();
    let mut adam = Adam::new(posterior.model.weights.len(), config.learning_rate);
    let mut reports = Vec::with_capacity(config.rounds);

    for round in 1..=config.rounds {
        let label = format!("round-{round}-sim");
        let n = config.sims_per_round;
        let (thetas, acceptance) = if round == 1 {
            let mut rng = stream.derive(&label, 0).rng();
            ((0..n).map(|_| prior.sample(&mut rng)).collect::<Vec<_>>(), 1.0)
        } else {
            let draws =
                posterior.sample(&x, n, stream.derive(&label, 0), config.max_proposals, config.min_acceptance)?;
            let a = draws.acceptance();
            (draws.samples, a)
        };
        let streams: Vec<RngStream> = (0..n as u64).map(|i| stream.derive(&label, i + 1)).collect();
        let outputs = simulate_many(sim, &thetas, &streams);
        let mut invalid = 0;
        let first_new = data.len();
        for (theta, out) in thetas.iter().zip(outputs) {
            match out {
                Some(s) => data.push(prior.to_unit(theta), posterior.normalizer.apply(&s), round == 1),
                None => invalid += 1,
            }
        }
        data.mark_validation(
            first_new,
            config.validation_fraction,
            &mut stream.derive(&format!("round-{round}-train"), 1).rng(),
        );
        let objective = if round == 1 {
            Objective::Nll
        } else {
            Objective::Atomic { atoms: config.atoms, prior_nll: config.prior_nll }
        };
        let training = train_round(
            &mut posterior.model,
            &mut adam,
            &data,
            config,
            objective,
            round,
            stream.derive(&format!("round-{round}-train"), 0),
        )?;
        let report = RoundReport {
            round,
            simulations: n,
            invalid,
            proposal_acceptance: acceptance,
            leakage: 1.0 - acceptance,
            dataset_size: data.len(),
            training,
        };
        log::info!(
            "round {round}: {invalid}/{n} invalid, acceptance {acceptance:.3}, best validation loss {:.4} at epoch {}",
            report.training.best_validation_loss,
            report.training.best_epoch
        );
        on_round(&report, &posterior);
        reports.push(report);
    }

    let draws = posterior.sample(
        &x,
        config.posterior_samples,
        stream.derive("posterior", 0),
        config.max_proposals,
        config.min_acceptance,
    )?;
    Ok(SnpeResult {
        final_acceptance: draws.acceptance(),
        samples: draws.samples,
        posterior,
        reports,
        observation: x,
    })
}
