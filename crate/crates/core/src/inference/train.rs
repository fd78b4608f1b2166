//! Loss functions, gradients and the per-round training loop.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::RngStream;
use crate::inference::mdn::MdnModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub rounds: usize,
    pub sims_per_round: usize,
    /// Prior-predictive simulations used to fit the summary normalizer.
    pub pilot_sims: usize,
    pub posterior_samples: usize,
    pub atoms: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Epochs without validation improvement before a round stops early.
    pub patience: usize,
    pub validation_fraction: f64,
    pub components: usize,
    pub hidden: Vec<usize>,
    /// Global gradient-norm clip; zero disables clipping.
    pub grad_clip: f64,
    /// In atomic rounds, also fit prior-drawn pairs by likelihood.
    pub prior_nll: bool,
    pub max_proposals: u64,
    pub min_acceptance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            sims_per_round: 5000,
            pilot_sims: 1000,
            posterior_samples: 1000,
            atoms: 10,
            batch_size: 32,
            epochs: 300,
            learning_rate: 5e-4,
            patience: 20,
            validation_fraction: 0.1,
            components: 8,
            hidden: vec![50, 50],
            grad_clip: 5.0,
            prior_nll: true,
            max_proposals: 1_000_000,
            min_acceptance: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rounds", self.rounds),
            ("sims_per_round", self.sims_per_round),
            ("posterior_samples", self.posterior_samples),
            ("atoms", self.atoms),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("patience", self.patience),
            ("components", self.components),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("train.{name} must be positive")));
            }
        }
        if self.atoms > self.batch_size {
            return Err(Error::Config("train.atoms must not exceed train.batch_size".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("train.hidden needs at least one non-empty layer".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("train.validation_fraction must lie in (0, 1)".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config("train.grad_clip must be non-negative".into()));
        }
        if self.max_proposals == 0 || !(self.min_acceptance > 0.0 && self.min_acceptance < 1.0) {
            return Err(Error::Config("train.max_proposals and min_acceptance out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Negative log-likelihood `-log q(theta | x)`.
    Nll,
    /// Atomic contrastive loss over `atoms` parameters per datum. With
    /// `prior_nll`, prior-drawn pairs also contribute their likelihood loss.
    Atomic { atoms: usize, prior_nll: bool },
}

/// Parameters (unit-cube coordinates) paired with normalized summaries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub thetas: Vec<Vec<f64>>,
    pub xs: Vec<Vec<f64>>,
    /// Whether each parameter was drawn from the prior (rather than a proposal).
    pub from_prior: Vec<bool>,
    /// Held-out flag; fixed once assigned so later rounds never validate on
    /// pairs an earlier round trained on.
    pub validation: Vec<bool>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn push(&mut self, theta: Vec<f64>, x: Vec<f64>, from_prior: bool) {
        self.thetas.push(theta);
        self.xs.push(x);
        self.from_prior.push(from_prior);
        self.validation.push(false);
    }

    /// Hold out `fraction` (at least one) of the pairs from index `from` on.
    pub fn mark_validation<R: Rng>(&mut self, from: usize, fraction: f64, rng: &mut R) {
        let mut idx: Vec<usize> = (from..self.len()).collect();
        if idx.len() < 2 {
            return;
        }
        idx.shuffle(rng);
        let k = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len() - 1);
        for &i in &idx[..k] {
            self.validation[i] = true;
        }
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            thetas: idx.iter().map(|&i| self.thetas[i].clone()).collect(),
            xs: idx.iter().map(|&i| self.xs[i].clone()).collect(),
            from_prior: idx.iter().map(|&i| self.from_prior[i]).collect(),
            validation: idx.iter().map(|&i| self.validation[i]).collect(),
        }
    }
}

/// Mean NLL over the batch; adds its gradient to `grad` when given.
pub fn nll_loss(model: &MdnModel, thetas: &[&[f64]], xs: &[&[f64]], mut grad: Option<&mut [f64]>) -> f64 {
    let n = thetas.len() as f64;
    let mut ws = model.workspace();
    let mut total = 0.0;
    for (theta, x) in thetas.iter().zip(xs) {
        model.forward(x, &mut ws);
        match grad.as_deref_mut() {
            Some(g) => {
                ws.clear_output_grad();
                total -= ws.accumulate_log_density_grad(theta, -1.0 / n);
                model.backward(&mut ws, g);
            }
            None => total -= ws.mixture.log_density(theta),
        }
    }
    total / n
}

/// For each datum `j`: `[j]` followed by `k - 1` distinct other indices drawn
/// uniformly without replacement. `k` is capped at `n`.
pub fn draw_atoms<R: Rng>(n: usize, k: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let k = k.min(n).max(1);
    let mut others: Vec<usize> = Vec::with_capacity(n.saturating_sub(1));
    (0..n)
        .map(|j| {
            others.clear();
            others.extend((0..n).filter(|&i| i != j));
            let (chosen, _) = others.partial_shuffle(rng, k - 1);
            let mut set = Vec::with_capacity(k);
            set.push(j);
            set.extend_from_slice(chosen);
            set
        })
        .collect()
}

/// Mean atomic loss `-log[q(theta_j|x_j) / sum_b q(theta_b|x_j)]` with the
/// atom sets from [`draw_atoms`], plus `-log q(theta_j|x_j)` for every `j`
/// flagged in `nll_mask`; adds the gradient to `grad` when given.
pub fn atomic_loss_with_atoms(
    model: &MdnModel,
    thetas: &[&[f64]],
    xs: &[&[f64]],
    atoms: &[Vec<usize>],
    nll_mask: Option<&[bool]>,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let n = xs.len() as f64;
    let mut ws = model.workspace();
    let mut total = 0.0;
    let mut lq = Vec::new();
    for (j, x) in xs.iter().enumerate() {
        let set = &atoms[j];
        model.forward(x, &mut ws);
        lq.clear();
        lq.extend(set.iter().map(|&b| ws.mixture.log_density(thetas[b])));
        let max = lq.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lq.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let with_nll = nll_mask.is_some_and(|m| m[j]);
        total += lse - lq[0];
        if with_nll {
            total -= lq[0];
        }
        if let Some(g) = grad.as_deref_mut() {
            ws.clear_output_grad();
            for (pos, &b) in set.iter().enumerate() {
                let soft = (lq[pos] - lse).exp();
                let coeff = match (pos, with_nll) {
                    (0, true) => soft - 2.0,
                    (0, false) => soft - 1.0,
                    _ => soft,
                };
                if coeff != 0.0 {
                    ws.accumulate_log_density_grad(thetas[b], coeff / n);
                }
            }
            model.backward(&mut ws, g);
        }
    }
    total / n
}

/// Atomic loss with freshly drawn atoms.
pub fn atomic_loss<R: Rng>(model: &MdnModel, thetas: &[&[f64]], xs: &[&[f64]], k: usize, rng: &mut R) -> f64 {
    let atoms = draw_atoms(thetas.len(), k, rng);
    atomic_loss_with_atoms(model, thetas, xs, &atoms, None, None)
}

/// Loss and gradient for one batch under `objective`, drawing atoms from `rng`.
pub fn loss_and_gradient<R: Rng>(
    model: &MdnModel,
    thetas: &[&[f64]],
    xs: &[&[f64]],
    from_prior: &[bool],
    objective: Objective,
    rng: &mut R,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; model.weights.len()];
    let loss = match objective {
        Objective::Nll => nll_loss(model, thetas, xs, Some(&mut grad)),
        Objective::Atomic { atoms, prior_nll } => {
            let sets = draw_atoms(thetas.len(), atoms, rng);
            let mask = prior_nll.then_some(from_prior);
            atomic_loss_with_atoms(model, thetas, xs, &sets, mask, Some(&mut grad))
        }
    };
    (loss, grad)
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn step(&mut self, weights: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..weights.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            weights[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

fn clip_norm(grad: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

/// Loss curves of one training round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub objective: Objective,
    pub train_size: usize,
    pub validation_size: usize,
    pub initial_validation_loss: f64,
    pub train_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
}

fn refs(d: &Dataset) -> (Vec<&[f64]>, Vec<&[f64]>) {
    (d.thetas.iter().map(|v| v.as_slice()).collect(), d.xs.iter().map(|v| v.as_slice()).collect())
}

/// Train `model` in place on `data` and leave it at the weights with the best
/// validation loss. Validation atoms are drawn once so the curve is comparable
/// across epochs. The optimizer state carries over between rounds.
pub fn train_round(
    model: &mut MdnModel,
    adam: &mut Adam,
    data: &Dataset,
    config: &TrainConfig,
    objective: Objective,
    round: usize,
    stream: RngStream,
) -> Result<TrainingTrace> {
    if data.len() < 2 {
        return Err(Error::InsufficientData(format!("round {round}: {} training pairs", data.len())));
    }
    let mut rng = stream.rng();
    let mut data = data.clone();
    if !data.validation.contains(&true) {
        data.mark_validation(0, config.validation_fraction, &mut rng);
    }
    let (val_idx, train_idx): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| data.validation[i]);
    if train_idx.is_empty() {
        return Err(Error::InsufficientData(format!("round {round}: no training pairs left after validation split")));
    }
    let val = data.subset(&val_idx);
    let train = data.subset(&train_idx);
    let (val_t, val_x) = refs(&val);
    let (train_t, train_x) = refs(&train);

    let val_atoms = match objective {
        Objective::Atomic { atoms, .. } => Some(draw_atoms(val.len(), atoms, &mut rng)),
        Objective::Nll => None,
    };
    let val_mask = match objective {
        Objective::Atomic { prior_nll: true, .. } => Some(val.from_prior.as_slice()),
        _ => None,
    };
    let val_loss = |m: &MdnModel| match &val_atoms {
        Some(a) => atomic_loss_with_atoms(m, &val_t, &val_x, a, val_mask, None),
        None => nll_loss(m, &val_t, &val_x, None),
    };

    let initial = val_loss(model);
    let mut best = (initial, 0usize, model.weights.clone());
    let mut train_losses = Vec::new();
    let mut validation_losses = Vec::new();
    let mut idx: Vec<usize> = (0..train.len()).collect();
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in idx.chunks(config.batch_size) {
            let bt: Vec<&[f64]> = chunk.iter().map(|&i| train_t[i]).collect();
            let bx: Vec<&[f64]> = chunk.iter().map(|&i| train_x[i]).collect();
            let bp: Vec<bool> = chunk.iter().map(|&i| train.from_prior[i]).collect();
            let (loss, mut grad) = loss_and_gradient(model, &bt, &bx, &bp, objective, &mut rng);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { round, epoch, detail: format!("non-finite batch loss {loss}") });
            }
            clip_norm(&mut grad, config.grad_clip);
            adam.step(&mut model.weights, &grad);
            epoch_loss += loss * chunk.len() as f64;
        }
        train_losses.push(epoch_loss / train.len() as f64);
        let v = val_loss(model);
        if !v.is_finite() {
            return Err(Error::Divergence { round, epoch, detail: format!("non-finite validation loss {v}") });
        }
        validation_losses.push(v);
        log::debug!("round {round} epoch {epoch}: train {:.5} validation {v:.5}", train_losses[epoch - 1]);
        if v < best.0 {
            best = (v, epoch, model.weights.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    model.weights = best.2;
    Ok(TrainingTrace {
        objective,
        train_size: train.len(),
        validation_size: val.len(),
        initial_validation_loss: initial,
        train_losses,
        validation_losses,
        best_epoch: best.1,
        best_validation_loss: best.0,
    })
}
