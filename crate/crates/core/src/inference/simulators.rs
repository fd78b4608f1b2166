//! Simulators as seen by the inference code: a parameter vector and a random
//! stream in, a summary vector out.

use rayon::prelude::*;

use crate::excitation::RngStream;
use crate::simulator::{simulate, SimConfig};
use crate::summaries::{summarize_with_lags, summary_layout, Normalizer, DEFAULT_LAGS};
use crate::vehicle::{IdentifiedParams, Measurement};

pub trait SummarySimulator: Sync {
    fn param_dim(&self) -> usize;
    fn summary_dim(&self) -> usize;
    /// `None` marks an invalid simulation.
    fn simulate(&self, theta: &[f64], stream: RngStream) -> Option<Vec<f64>>;

    fn summary_names(&self) -> Vec<String> {
        (0..self.summary_dim()).map(|i| format!("s{i}")).collect()
    }
}

impl<S: SummarySimulator + ?Sized> SummarySimulator for &S {
    fn param_dim(&self) -> usize {
        (**self).param_dim()
    }
    fn summary_dim(&self) -> usize {
        (**self).summary_dim()
    }
    fn simulate(&self, theta: &[f64], stream: RngStream) -> Option<Vec<f64>> {
        (**self).simulate(theta, stream)
    }
    fn summary_names(&self) -> Vec<String> {
        (**self).summary_names()
    }
}

/// Simulate every `(theta, stream)` pair; concurrent, order-preserving.
pub fn simulate_many<S: SummarySimulator + ?Sized>(
    sim: &S,
    thetas: &[Vec<f64>],
    streams: &[RngStream],
) -> Vec<Option<Vec<f64>>> {
    assert_eq!(thetas.len(), streams.len());
    thetas.par_iter().zip(streams.par_iter()).map(|(t, s)| sim.simulate(t, *s)).collect()
}

/// Full vehicle simulator followed by the summary statistics.
#[derive(Debug, Clone)]
pub struct VehicleSimulator {
    pub config: SimConfig,
    pub lags: Vec<usize>,
}

impl VehicleSimulator {
    pub fn new(config: SimConfig) -> Self {
        Self { config, lags: DEFAULT_LAGS.to_vec() }
    }
}

impl SummarySimulator for VehicleSimulator {
    fn param_dim(&self) -> usize {
        IdentifiedParams::DIM
    }

    fn summary_dim(&self) -> usize {
        self.summary_names().len()
    }

    fn simulate(&self, theta: &[f64], stream: RngStream) -> Option<Vec<f64>> {
        let theta = IdentifiedParams::from_slice(theta).ok()?;
        let record = simulate(&theta, stream, &self.config);
        if !record.valid {
            log::debug!("invalid simulation at {theta:?}: {:?}", record.abort_reason);
            return None;
        }
        summarize_with_lags(&record, &self.lags).ok().map(|s| s.values)
    }

    fn summary_names(&self) -> Vec<String> {
        summary_layout(&Measurement::CHANNELS, &self.lags)
    }
}

/// Inference over a subset of coordinates; the rest stay at `base`.
#[derive(Debug, Clone)]
pub struct Subset<S> {
    pub inner: S,
    pub base: Vec<f64>,
    pub dims: Vec<usize>,
}

impl<S: SummarySimulator> Subset<S> {
    pub fn embed(&self, theta: &[f64]) -> Vec<f64> {
        let mut full = self.base.clone();
        for (&d, &v) in self.dims.iter().zip(theta) {
            full[d] = v;
        }
        full
    }
}

impl<S: SummarySimulator> SummarySimulator for Subset<S> {
    fn param_dim(&self) -> usize {
        self.dims.len()
    }
    fn summary_dim(&self) -> usize {
        self.inner.summary_dim()
    }
    fn simulate(&self, theta: &[f64], stream: RngStream) -> Option<Vec<f64>> {
        self.inner.simulate(&self.embed(theta), stream)
    }
    fn summary_names(&self) -> Vec<String> {
        self.inner.summary_names()
    }
}

/// Applies a fitted normalizer to every simulated summary.
#[derive(Debug, Clone)]
pub struct Normalized<S> {
    pub inner: S,
    pub normalizer: Normalizer,
}

impl<S: SummarySimulator> SummarySimulator for Normalized<S> {
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }
    fn summary_dim(&self) -> usize {
        self.inner.summary_dim()
    }
    fn simulate(&self, theta: &[f64], stream: RngStream) -> Option<Vec<f64>> {
        self.inner.simulate(theta, stream).map(|s| self.normalizer.apply(&s))
    }
    fn summary_names(&self) -> Vec<String> {
        self.inner.summary_names()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::excitation::{ExcitationProfile, NoiseSpec};
    use crate::vehicle::VehicleConstants;

    fn vehicle() -> VehicleSimulator {
        let c = VehicleConstants::default();
        let mut config = SimConfig::new(c, ExcitationProfile::default(), NoiseSpec::generate(&c, 0.05, 10, RngStream::new(1, 0)));
        config.duration = 1.0;
        VehicleSimulator::new(config)
    }

    #[test]
    fn vehicle_summary_has_default_layout() {
        let sim = vehicle();
        assert_eq!(sim.summary_dim(), 35);
        let s = sim.simulate(&IdentifiedParams::nominal().to_array(), RngStream::new(3, 1)).unwrap();
        assert_eq!(s.len(), 35);
        assert!(sim.simulate(&[3.0, 0.5, 0.0, 0.0, 0.0, 0.0], RngStream::new(3, 1)).is_none());
    }

    #[test]
    fn subset_embeds_into_base() {
        let sim = Subset { inner: vehicle(), base: IdentifiedParams::nominal().to_array().to_vec(), dims: vec![0, 4] };
        assert_eq!(sim.embed(&[1.2, 0.1]), vec![1.2, 0.5, 0.0, 0.0, 0.1, 0.0]);
        let stream = RngStream::new(5, 2);
        assert_eq!(sim.simulate(&[1.2, 0.1], stream), sim.inner.simulate(&sim.embed(&[1.2, 0.1]), stream));
    }

    #[test]
    fn batch_preserves_order() {
        let sim = vehicle();
        let thetas: Vec<Vec<f64>> = [1.1, 1.3, 1.45].iter().map(|&l| vec![l, 0.5, 0.0, 0.0, 0.0, 0.0]).collect();
        let streams: Vec<RngStream> = (0..3).map(|i| RngStream::new(9, i)).collect();
        let batch = simulate_many(&sim, &thetas, &streams);
        for i in 0..3 {
            assert_eq!(batch[i], sim.simulate(&thetas[i], streams[i]));
        }
    }
}
