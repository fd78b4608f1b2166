//! Excitation inputs and every stochastic element of the simulator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::vehicle::{
    rolling_equilibrium, ControlInput, EffectiveParams, Measurement, VehicleConstants, VehicleState,
    STIFFNESS_SCALE,
};

/// Sinusoidal steering plus a square-wave traction/brake torque.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExcitationProfile {
    /// Steering amplitude [rad].
    pub steer_amplitude: f64,
    /// Steering period [s].
    pub steer_period: f64,
    /// Square-wave torque amplitude [N m].
    pub torque_amplitude: f64,
    /// Square-wave period [s]; traction in the first half, braking in the second.
    pub torque_period: f64,
    pub duration: f64,
    /// Fraction of the braking torque applied at the front axle.
    pub brake_front_share: f64,
    /// With braking disabled the second half-period coasts.
    pub braking: bool,
}

impl Default for ExcitationProfile {
    fn default() -> Self {
        Self {
            steer_amplitude: 0.04,
            steer_period: 4.0,
            torque_amplitude: 250.0,
            torque_period: 5.0,
            duration: 5.0,
            brake_front_share: 0.6,
            braking: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TorquePhase {
    Traction,
    Braking,
}

impl ExcitationProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.steer_amplitude >= 0.0 && self.steer_amplitude < PI / 4.0) {
            return Err(Error::Config("excitation.steer_amplitude must lie in [0, pi/4)".into()));
        }
        if !(self.torque_amplitude >= 0.0 && self.torque_amplitude.is_finite()) {
            return Err(Error::Config("excitation.torque_amplitude must be non-negative".into()));
        }
        for (name, v) in [
            ("steer_period", self.steer_period),
            ("torque_period", self.torque_period),
            ("duration", self.duration),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("excitation.{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.brake_front_share) {
            return Err(Error::Config("excitation.brake_front_share must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn steer_at(&self, t: f64) -> f64 {
        self.steer_amplitude * (2.0 * PI * t / self.steer_period).sin()
    }

    pub fn phase_at(&self, t: f64) -> TorquePhase {
        if t.rem_euclid(self.torque_period) < 0.5 * self.torque_period {
            TorquePhase::Traction
        } else {
            TorquePhase::Braking
        }
    }

    /// Torque inputs for a phase; the steering field is left at zero.
    pub fn torques(&self, phase: TorquePhase) -> ControlInput {
        match phase {
            TorquePhase::Traction => ControlInput { traction_front: self.torque_amplitude, ..Default::default() },
            TorquePhase::Braking if self.braking => ControlInput {
                brake_front: -self.torque_amplitude * self.brake_front_share,
                brake_rear: -self.torque_amplitude * (1.0 - self.brake_front_share),
                ..Default::default()
            },
            TorquePhase::Braking => ControlInput::default(),
        }
    }

    pub fn input_at(&self, t: f64) -> ControlInput {
        ControlInput { steer: self.steer_at(t), ..self.torques(self.phase_at(t)) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub mean: f64,
    pub std: f64,
}

/// Process and measurement noise description.
///
/// Mixture components are stored in deviation units (1e5 N or N/rad), one
/// mixture per stiffness in the order `[C_kf, C_kr, C_af, C_ar]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub stiffness_mixture: [Vec<GaussianComponent>; 4],
    pub rel_std_rotational: f64,
    pub rel_std_accel: f64,
    pub v0_min: f64,
    pub v0_max: f64,
}

impl NoiseSpec {
    pub const MIXTURE_COMPONENTS: usize = 10;

    /// Draw the fixed mixture components once: means uniform in
    /// `[-max_rel, max_rel]` of nominal, stds uniform in `(0, max_rel]`.
    pub fn generate(constants: &VehicleConstants, max_rel: f64, components: usize, stream: RngStream) -> Self {
        let mut rng = stream.rng();
        let nominals = [
            constants.long_stiffness_front,
            constants.long_stiffness_rear,
            constants.cornering_stiffness_front,
            constants.cornering_stiffness_rear,
        ];
        let mixture = nominals.map(|nominal| {
            let scale = max_rel * nominal / STIFFNESS_SCALE;
            (0..components)
                .map(|_| {
                    let mean = scale * (2.0 * rng.random::<f64>() - 1.0);
                    let std = scale * (1.0 - rng.random::<f64>());
                    GaussianComponent { mean, std }
                })
                .collect()
        });
        Self { stiffness_mixture: mixture, rel_std_rotational: 0.05, rel_std_accel: 0.10, v0_min: 10.0, v0_max: 11.0 }
    }

    /// No process noise, no sensor noise and a fixed initial speed.
    pub fn noise_free(v0: f64) -> Self {
        let zero = vec![GaussianComponent { mean: 0.0, std: 0.0 }; Self::MIXTURE_COMPONENTS];
        Self {
            stiffness_mixture: [zero.clone(), zero.clone(), zero.clone(), zero],
            rel_std_rotational: 0.0,
            rel_std_accel: 0.0,
            v0_min: v0,
            v0_max: v0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for mixture in &self.stiffness_mixture {
            if mixture.is_empty() {
                return Err(Error::Config("stiffness mixture has no components".into()));
            }
            if mixture.iter().any(|c| !(c.std >= 0.0) || !c.mean.is_finite()) {
                return Err(Error::Config("mixture components need finite means and non-negative stds".into()));
            }
        }
        if !(self.rel_std_rotational >= 0.0 && self.rel_std_accel >= 0.0) {
            return Err(Error::Config("measurement noise levels must be non-negative".into()));
        }
        if !(self.v0_min > 0.0 && self.v0_max >= self.v0_min) {
            return Err(Error::Config("initial speed range must be positive and ordered".into()));
        }
        Ok(())
    }
}

/// Reproducible random stream: a seed plus an independent ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Named child stream, e.g. `derive("round-2-sim", i)`.
    pub fn derive(&self, label: &str, index: u64) -> RngStream {
        let label_hash = label
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
        let id = splitmix64(self.stream_id ^ splitmix64(label_hash ^ splitmix64(index)));
        RngStream { seed: self.seed, stream_id: id }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One draw of the stiffness process noise, `[kf, kr, af, ar]`.
pub fn sample_stiffness_noise<R: Rng>(rng: &mut R, spec: &NoiseSpec) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (o, mixture) in out.iter_mut().zip(&spec.stiffness_mixture) {
        let k = rng.random_range(0..mixture.len());
        let z: f64 = rng.sample(StandardNormal);
        *o = mixture[k].mean + mixture[k].std * z;
    }
    out
}

/// Zero-mean Gaussian sensor noise with std proportional to the clean value.
pub fn add_measurement_noise<R: Rng>(rng: &mut R, clean: &Measurement, spec: &NoiseSpec) -> Measurement {
    let mut noisy = |v: f64, rel: f64| {
        let z: f64 = rng.sample(StandardNormal);
        v + rel * v.abs() * z
    };
    Measurement {
        ax: noisy(clean.ax, spec.rel_std_accel),
        ay: noisy(clean.ay, spec.rel_std_accel),
        yaw_rate: noisy(clean.yaw_rate, spec.rel_std_rotational),
        omega_f: noisy(clean.omega_f, spec.rel_std_rotational),
        omega_r: noisy(clean.omega_r, spec.rel_std_rotational),
    }
}

pub fn sample_initial_speed<R: Rng>(rng: &mut R, spec: &NoiseSpec) -> f64 {
    let u: f64 = rng.random();
    spec.v0_min + u * (spec.v0_max - spec.v0_min)
}

/// Rolling-equilibrium start at a uniformly drawn forward speed.
pub fn sample_initial_state<R: Rng>(
    rng: &mut R,
    spec: &NoiseSpec,
    eff: &EffectiveParams,
    constants: &VehicleConstants,
) -> Result<VehicleState> {
    let v0 = sample_initial_speed(rng, spec);
    rolling_equilibrium(v0, eff, constants)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::{resolve_params, IdentifiedParams};
    use approx::assert_relative_eq;

    fn spec() -> NoiseSpec {
        NoiseSpec::generate(&VehicleConstants::default(), 0.05, 10, RngStream::new(7, 0))
    }

    #[test]
    fn input_profile_examples() {
        let p = ExcitationProfile::default();
        let u0 = p.input_at(0.0);
        assert_eq!(u0.steer, 0.0);
        assert_eq!(p.phase_at(0.0), TorquePhase::Traction);
        assert_eq!(u0.traction_front, 250.0);
        assert_relative_eq!(p.input_at(1.0).steer, 0.04, epsilon = 1e-15);
        let u = p.input_at(2.6);
        assert_eq!(p.phase_at(2.6), TorquePhase::Braking);
        assert_eq!(u.traction_front, 0.0);
        assert_relative_eq!(u.brake_front, -150.0);
        assert_relative_eq!(u.brake_rear, -100.0);
        assert_eq!(p.phase_at(2.5), TorquePhase::Braking);
        assert_eq!(p.phase_at(2.499_999), TorquePhase::Traction);

        let coast = ExcitationProfile { braking: false, ..p };
        assert_eq!(coast.input_at(3.0).brake_front, 0.0);
    }

    #[test]
    fn square_wave_spends_half_period_in_each_phase() {
        let p = ExcitationProfile { torque_period: 1.3, ..Default::default() };
        let n = 130_000;
        let traction = (0..n)
            .filter(|i| p.phase_at((*i as f64 + 0.5) * 1e-5) == TorquePhase::Traction)
            .count();
        assert_eq!(traction, n / 2);
    }

    #[test]
    fn generated_mixture_respects_bounds() {
        let s = spec();
        s.validate().unwrap();
        let bounds = [0.05, 0.05, 0.03, 0.03];
        for (mixture, b) in s.stiffness_mixture.iter().zip(bounds) {
            assert_eq!(mixture.len(), 10);
            for c in mixture {
                assert!(c.mean.abs() <= b + 1e-15);
                assert!(c.std > 0.0 && c.std <= b + 1e-15);
            }
        }
    }

    #[test]
    fn degenerate_mixtures_are_deterministic() {
        let zero = NoiseSpec::noise_free(10.0);
        let mut rng = RngStream::new(1, 2).rng();
        assert_eq!(sample_stiffness_noise(&mut rng, &zero), [0.0; 4]);

        let mut fixed = zero.clone();
        let c = GaussianComponent { mean: 0.012, std: 0.0 };
        fixed.stiffness_mixture = [vec![c; 10], vec![c; 10], vec![c; 10], vec![c; 10]];
        assert_eq!(sample_stiffness_noise(&mut rng, &fixed), [0.012; 4]);
    }

    #[test]
    fn stiffness_noise_mean_matches_mixture_mean() {
        let s = spec();
        let mut rng = RngStream::new(11, 0).rng();
        let n = 100_000;
        let mut sums = [0.0; 4];
        let mut sq = [0.0; 4];
        for _ in 0..n {
            let d = sample_stiffness_noise(&mut rng, &s);
            for k in 0..4 {
                sums[k] += d[k];
                sq[k] += d[k] * d[k];
            }
        }
        for k in 0..4 {
            let mixture = &s.stiffness_mixture[k];
            let analytic = mixture.iter().map(|c| c.mean).sum::<f64>() / mixture.len() as f64;
            let mean = sums[k] / n as f64;
            let se = ((sq[k] / n as f64 - mean * mean) / n as f64).sqrt();
            assert!((mean - analytic).abs() < 3.0 * se, "channel {k}: {mean} vs {analytic}");
        }
    }

    #[test]
    fn measurement_noise_is_relative() {
        let s = spec();
        let mut rng = RngStream::new(3, 0).rng();
        let zero = add_measurement_noise(&mut rng, &Measurement::default(), &s);
        assert_eq!(zero, Measurement::default());

        let clean = Measurement { ax: 2.0, ay: 0.0, yaw_rate: 0.0, omega_f: 30.0, omega_r: 0.0 };
        let n = 100_000;
        let (mut sx, mut sxx, mut sw, mut sww) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let m = add_measurement_noise(&mut rng, &clean, &s);
            sx += m.ax;
            sxx += m.ax * m.ax;
            sw += m.omega_f;
            sww += m.omega_f * m.omega_f;
        }
        let nf = n as f64;
        let std_ax = (sxx / nf - (sx / nf).powi(2)).sqrt();
        let std_w = (sww / nf - (sw / nf).powi(2)).sqrt();
        assert!((std_ax - 0.2).abs() < 0.03 * 0.2, "{std_ax}");
        assert!((std_w - 1.5).abs() < 0.03 * 1.5, "{std_w}");
    }

    #[test]
    fn initial_state_examples() {
        let s = spec();
        let c = VehicleConstants::default();
        let eff = resolve_params(&c, &IdentifiedParams::nominal(), &[0.0; 4]).unwrap();
        let mut rng = RngStream::new(5, 0).rng();
        let (mut lo, mut hi) = (f64::MAX, f64::MIN);
        for _ in 0..100_000 {
            let v = sample_initial_speed(&mut rng, &s);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        assert!(lo >= 10.0 && hi <= 11.0);
        let st = sample_initial_state(&mut rng, &s, &eff, &c).unwrap();
        assert_eq!((st.vy, st.yaw_rate), (0.0, 0.0));
        assert_eq!((st.alpha_hat_f, st.alpha_hat_r, st.kappa_hat_f, st.kappa_hat_r), (0.0, 0.0, 0.0, 0.0));
        assert_relative_eq!(10.675 / 0.305, 35.0, epsilon = 1e-12);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = RngStream::new(42, 3);
        let xs: Vec<u64> = (0..8).map({
            let mut r = a.rng();
            move |_| r.random()
        }).collect();
        let ys: Vec<u64> = (0..8).map({
            let mut r = a.rng();
            move |_| r.random()
        }).collect();
        assert_eq!(xs, ys);
        assert_ne!(a.derive("pilot", 0), a.derive("pilot", 1));
        assert_ne!(a.derive("pilot", 0), a.derive("posterior", 0));
        assert_eq!(a.derive("pilot", 9), a.derive("pilot", 9));
    }
}
