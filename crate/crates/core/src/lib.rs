//! Simulation-based identification of vehicle center-of-gravity coordinates
//! and tire stiffness parameters.
//!
//! The crate is organised bottom-up:
//!
//! - [`vehicle`]: single-track vehicle with Dugoff tires, slip lag and wheel dynamics.
//! - [`excitation`]: steering/torque excitation, stiffness process noise, sensor noise.
//! - [`simulator`]: fixed-step RK4 integration producing 200 Hz noisy trajectories.
//! - [`summaries`]: fixed-length summary statistics and pilot normalization.
//! - [`inference`]: uniform prior, mixture density network, sequential
//!   atomic posterior estimation and rejection ABC.
//! - [`observability`]: Gaussian-likelihood Fisher information of the summaries.
//! - [`analysis`]: posterior tables, kernel density grids and pair-plot export.
//! - [`config`] and [`commands`]: experiment configuration and the CLI pipeline stages.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod commands;
pub mod config;
pub mod error;
pub mod excitation;
pub mod inference;
pub mod io;
pub mod observability;
pub mod simulator;
pub mod summaries;
pub mod vehicle;

pub use error::{Error, Result};
