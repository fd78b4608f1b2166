//! Likelihood-free posterior estimation.

pub mod abc;
pub mod mdn;
pub mod prior;
pub mod simulators;
pub mod snpe;
pub mod surrogate;
pub mod train;

pub use abc::{rejection_abc, AbcResult};
pub use mdn::{Mixture, MdnModel};
pub use prior::PriorBox;
pub use simulators::{Normalized, Subset, SummarySimulator, VehicleSimulator};
pub use snpe::{pilot_normalizer, run_snpe, MdnPosterior, RoundReport, SnpeResult};
pub use surrogate::LinearGaussianSimulator;
pub use train::{Objective, TrainConfig};
