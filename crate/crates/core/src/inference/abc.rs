//! Rejection ABC: keep the prior draws whose simulated summaries land closest
//! to the observation.

use crate::error::{Error, Result};
use crate::excitation::RngStream;
use crate::inference::prior::PriorBox;
use crate::inference::simulators::{simulate_many, SummarySimulator};

#[derive(Debug, Clone, PartialEq)]
pub struct AbcResult {
    /// Accepted parameters, closest first.
    pub samples: Vec<Vec<f64>>,
    pub distances: Vec<f64>,
    /// Largest accepted distance.
    pub epsilon: f64,
    pub invalid: usize,
}

/// Number of draws kept for `n_sims` simulations at `accept_fraction`.
pub fn accepted_count(n_sims: usize, accept_fraction: f64) -> usize {
    (n_sims as f64 * accept_fraction).round() as usize
}

/// `sim` must already produce normalized summaries and `x_obs` be normalized
/// the same way; distances are Euclidean.
pub fn rejection_abc<S: SummarySimulator + ?Sized>(
    sim: &S,
    prior: &PriorBox,
    x_obs: &[f64],
    n_sims: usize,
    accept_fraction: f64,
    stream: RngStream,
) -> Result<AbcResult> {
    if !(accept_fraction > 0.0 && accept_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("accept fraction {accept_fraction} outside (0, 1]")));
    }
    let keep = accepted_count(n_sims, accept_fraction);
    if keep == 0 {
        return Err(Error::InvalidParameter("no draws would be accepted".into()));
    }
    let mut rng = stream.derive("abc", 0).rng();
    let thetas: Vec<Vec<f64>> = (0..n_sims).map(|_| prior.sample(&mut rng)).collect();
    let streams: Vec<RngStream> = (0..n_sims as u64).map(|i| stream.derive("abc", i + 1)).collect();
    let outputs = simulate_many(sim, &thetas, &streams);
    let mut scored: Vec<(f64, usize)> = outputs
        .iter()
        .enumerate()
        .filter_map(|(i, o)| {
            o.as_ref().map(|s| (s.iter().zip(x_obs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(), i))
        })
        .collect();
    let invalid = n_sims - scored.len();
    if scored.len() < keep {
        return Err(Error::InsufficientData(format!(
            "only {} valid simulations, {keep} requested",
            scored.len()
        )));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.truncate(keep);
    Ok(AbcResult {
        samples: scored.iter().map(|&(_, i)| thetas[i].clone()).collect(),
        distances: scored.iter().map(|&(d, _)| d).collect(),
        epsilon: scored.last().map_or(0.0, |s| s.0),
        invalid,
    })
}
