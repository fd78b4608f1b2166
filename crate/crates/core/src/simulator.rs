//! Fixed-step RK4 integration of the vehicle model under the excitation
//! profile, sampled at the sensor rate with sensor noise applied afterwards.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::{
    add_measurement_noise, sample_initial_speed, sample_stiffness_noise, ExcitationProfile, NoiseSpec, RngStream,
};
use crate::vehicle::{
    consistent_forces, measurement_of, resolve_params, rolling_equilibrium, state_derivative, ControlInput,
    EffectiveParams, IdentifiedParams, Measurement, VehicleConstants, VehicleState, MEASUREMENT_DIM,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub sample_rate: f64,
    pub duration: f64,
    pub substeps: usize,
    pub constants: VehicleConstants,
    pub profile: ExcitationProfile,
    pub noise: NoiseSpec,
}

impl SimConfig {
    pub fn new(constants: VehicleConstants, profile: ExcitationProfile, noise: NoiseSpec) -> Self {
        Self { sample_rate: 200.0, duration: profile.duration, substeps: 5, constants, profile, noise }
    }

    pub fn samples(&self) -> usize {
        (self.sample_rate * self.duration).round() as usize
    }

    /// Internal integration step.
    pub fn dt(&self) -> f64 {
        1.0 / (self.sample_rate * self.substeps as f64)
    }

    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        self.profile.validate()?;
        self.noise.validate()?;
        if self.substeps == 0 {
            return Err(Error::Config("sim.substeps must be at least 1".into()));
        }
        if !(self.sample_rate > 0.0 && self.duration > 0.0) {
            return Err(Error::Config("sim.sample_rate and duration must be positive".into()));
        }
        let n = self.sample_rate * self.duration;
        if (n - n.round()).abs() > 1e-9 || n.round() < 2.0 {
            return Err(Error::Config("sample_rate * duration must be an integer of at least 2".into()));
        }
        Ok(())
    }
}

/// One simulated (or recorded) trajectory of the five sensor channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: Vec<f64>,
    /// `a_x, a_y, r, w_f, w_r`.
    pub channels: [Vec<f64>; MEASUREMENT_DIM],
    pub theta: IdentifiedParams,
    pub stream: RngStream,
    pub valid: bool,
    pub abort_reason: Option<String>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn invalid(theta: IdentifiedParams, stream: RngStream, reason: String) -> Self {
        Self {
            t: Vec::new(),
            channels: Default::default(),
            theta,
            stream,
            valid: false,
            abort_reason: Some(reason),
        }
    }
}

/// Classical RK4 step for an autonomous-in-form system `f(t, y)`.
pub fn rk4_step<const N: usize, F>(y: &[f64; N], t: f64, dt: f64, mut f: F) -> Result<[f64; N]>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
{
    let axpy = |a: &[f64; N], h: f64, k: &[f64; N]| {
        let mut out = *a;
        for (o, ki) in out.iter_mut().zip(k) {
            *o += h * ki;
        }
        out
    };
    let k1 = f(t, y)?;
    let k2 = f(t + 0.5 * dt, &axpy(y, 0.5 * dt, &k1))?;
    let k3 = f(t + 0.5 * dt, &axpy(y, 0.5 * dt, &k2))?;
    let k4 = f(t + dt, &axpy(y, dt, &k3))?;
    let mut out = *y;
    for i in 0..N {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

/// Advance the vehicle one RK4 step from `t`. Steering is evaluated at each
/// stage time; the torque square wave is held at its mid-step value so that
/// phase switches land on step boundaries. Returns the new state and the
/// longitudinal acceleration used to seed the next load-transfer solve.
pub fn integrate_step(
    state: &VehicleState,
    t: f64,
    dt: f64,
    profile: &ExcitationProfile,
    eff: &EffectiveParams,
    constants: &VehicleConstants,
    ax_prev: f64,
) -> Result<(VehicleState, f64)> {
    let torques = profile.torques(profile.phase_at(t + 0.5 * dt));
    let mut ax = ax_prev;
    let next = rk4_step(&state.to_array(), t, dt, |tau, y| {
        let input = ControlInput { steer: profile.steer_at(tau), ..torques };
        let (d, a) = state_derivative(&VehicleState::from_array(y), &input, eff, constants, ax)?;
        ax = a;
        Ok(d)
    })?;
    let next = VehicleState::from_array(&next);
    if !next.is_finite() {
        return Err(Error::InvalidState("non-finite state"));
    }
    if !(next.vx > 0.0) {
        return Err(Error::InvalidState("longitudinal velocity must be positive"));
    }
    Ok((next, ax))
}

/// Noise-free propagation from `state0`, recording the state and the clean
/// measurement after every block of `substeps` steps (`samples` records).
pub fn propagate(
    eff: &EffectiveParams,
    constants: &VehicleConstants,
    profile: &ExcitationProfile,
    state0: VehicleState,
    sample_rate: f64,
    substeps: usize,
    samples: usize,
) -> Result<(Vec<VehicleState>, Vec<Measurement>)> {
    let dt = 1.0 / (sample_rate * substeps as f64);
    let mut state = state0;
    let mut ax = 0.0;
    let mut states = Vec::with_capacity(samples);
    let mut meas = Vec::with_capacity(samples);
    let mut step = 0usize;
    for k in 1..=samples {
        for _ in 0..substeps {
            let t = step as f64 * dt;
            let (next, a) = integrate_step(&state, t, dt, profile, eff, constants, ax)?;
            state = next;
            ax = a;
            step += 1;
        }
        let t = k as f64 / sample_rate;
        let input = profile.input_at(t);
        let (forces, a) = consistent_forces(&state, &input, eff, constants, ax)?;
        ax = a;
        let m = measurement_of(&state, &input, &forces, constants.mass);
        if !m.to_array().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidState("non-finite measurement"));
        }
        states.push(state);
        meas.push(m);
    }
    Ok((states, meas))
}

/// Simulate one noisy trajectory. Deterministic in `(theta, stream, config)`;
/// failures produce a record flagged invalid instead of an error.
pub fn simulate(theta: &IdentifiedParams, stream: RngStream, config: &SimConfig) -> TrajectoryRecord {
    let mut rng = stream.rng();
    let v0 = sample_initial_speed(&mut rng, &config.noise);
    let stiffness_noise = sample_stiffness_noise(&mut rng, &config.noise);
    let n = config.samples();
    let clean = resolve_params(&config.constants, theta, &stiffness_noise).and_then(|eff| {
        let state0 = rolling_equilibrium(v0, &eff, &config.constants)?;
        propagate(&eff, &config.constants, &config.profile, state0, config.sample_rate, config.substeps, n)
    });
    let (_, clean) = match clean {
        Ok(c) => c,
        Err(e) => return TrajectoryRecord::invalid(*theta, stream, e.to_string()),
    };
    let mut channels: [Vec<f64>; MEASUREMENT_DIM] = std::array::from_fn(|_| Vec::with_capacity(n));
    for m in &clean {
        let noisy = add_measurement_noise(&mut rng, m, &config.noise).to_array();
        for (c, v) in channels.iter_mut().zip(noisy) {
            c.push(v);
        }
    }
    TrajectoryRecord {
        t: (1..=n).map(|k| k as f64 / config.sample_rate).collect(),
        channels,
        theta: *theta,
        stream,
        valid: true,
        abort_reason: None,
    }
}

/// Element-wise [`simulate`]; may run concurrently, output order follows input order.
pub fn simulate_batch(thetas: &[IdentifiedParams], streams: &[RngStream], config: &SimConfig) -> Result<Vec<TrajectoryRecord>> {
    if thetas.len() != streams.len() {
        return Err(Error::InvalidParameter(format!(
            "{} parameter sets but {} streams",
            thetas.len(),
            streams.len()
        )));
    }
    Ok(thetas.par_iter().zip(streams.par_iter()).map(|(th, s)| simulate(th, *s, config)).collect())
}
