//! Single-track vehicle with Dugoff tires.
//!
//! Every function here is a pure evaluation of the continuous-time model:
//! slip kinematics, effective rolling radius, longitudinal load transfer,
//! combined-slip tire forces, body dynamics, wheel spin dynamics and the
//! first-order relaxation of the tire slips.
//!
//! Tire forces are generated from the *delayed* slips (`alpha_hat`,
//! `kappa_hat`) carried in [`VehicleState`]; the instantaneous slips only
//! drive the relaxation equations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stiffness deviations are expressed in units of 1e5 N (or N/rad).
pub const STIFFNESS_SCALE: f64 = 1e5;

/// Number of continuous states integrated by the simulator.
pub const STATE_DIM: usize = 9;

/// Number of measurement channels.
pub const MEASUREMENT_DIM: usize = 5;

const MAX_LOAD_ITERATIONS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleConstants {
    /// Vehicle mass [kg].
    pub mass: f64,
    /// Wheelbase [m].
    pub wheelbase: f64,
    pub gravity: f64,
    /// Free (unloaded) tire radius [m].
    pub free_radius: f64,
    /// Vertical tire stiffness [N/m].
    pub vertical_stiffness: f64,
    /// Wheel rotational inertia [kg m^2].
    pub wheel_inertia: f64,
    /// Road friction coefficient.
    pub friction: f64,
    /// Lateral tire stiffness per unit length, sets the relaxation length [N/m].
    pub lateral_stiffness: f64,
    pub long_stiffness_front: f64,
    pub long_stiffness_rear: f64,
    pub cornering_stiffness_front: f64,
    pub cornering_stiffness_rear: f64,
}

impl Default for VehicleConstants {
    fn default() -> Self {
        Self {
            mass: 1500.0,
            wheelbase: 2.7,
            gravity: 9.81,
            free_radius: 0.31,
            vertical_stiffness: 2.5e5,
            wheel_inertia: 1.2,
            friction: 0.9,
            lateral_stiffness: 2e5,
            long_stiffness_front: 1e5,
            long_stiffness_rear: 1e5,
            cornering_stiffness_front: 6e4,
            cornering_stiffness_rear: 6e4,
        }
    }
}

impl VehicleConstants {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("wheelbase", self.wheelbase),
            ("gravity", self.gravity),
            ("free_radius", self.free_radius),
            ("vertical_stiffness", self.vertical_stiffness),
            ("wheel_inertia", self.wheel_inertia),
            ("friction", self.friction),
            ("lateral_stiffness", self.lateral_stiffness),
            ("long_stiffness_front", self.long_stiffness_front),
            ("long_stiffness_rear", self.long_stiffness_rear),
            ("cornering_stiffness_front", self.cornering_stiffness_front),
            ("cornering_stiffness_rear", self.cornering_stiffness_rear),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("vehicle.{name} must be positive, got {value}")));
            }
        }
        if self.friction > 1.5 {
            return Err(Error::Config(format!(
                "vehicle.friction must lie in (0, 1.5], got {}",
                self.friction
            )));
        }
        if self.free_radius <= self.mass * self.gravity / (2.0 * self.vertical_stiffness) {
            return Err(Error::Config(
                "vehicle.free_radius too small: loaded radius would be non-positive".into(),
            ));
        }
        Ok(())
    }
}

/// The six identified quantities: COG coordinates and stiffness deviations.
///
/// Deviations are in units of [`STIFFNESS_SCALE`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedParams {
    pub l_f: f64,
    pub h_cog: f64,
    pub d_ckf: f64,
    pub d_ckr: f64,
    pub d_caf: f64,
    pub d_car: f64,
}

impl IdentifiedParams {
    pub const DIM: usize = 6;
    pub const NAMES: [&'static str; 6] = ["l_f", "h_cog", "d_Ckf", "d_Ckr", "d_Caf", "d_Car"];

    /// Nominal parameter set: COG at (1.3 m, 0.5 m), no stiffness deviation.
    pub fn nominal() -> Self {
        Self { l_f: 1.3, h_cog: 0.5, d_ckf: 0.0, d_ckr: 0.0, d_caf: 0.0, d_car: 0.0 }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.l_f, self.h_cog, self.d_ckf, self.d_ckr, self.d_caf, self.d_car]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != Self::DIM {
            return Err(Error::InvalidParameter(format!(
                "expected {} parameters, got {}",
                Self::DIM,
                v.len()
            )));
        }
        Ok(Self { l_f: v[0], h_cog: v[1], d_ckf: v[2], d_ckr: v[3], d_caf: v[4], d_car: v[5] })
    }
}

/// Physical parameters seen by the dynamics after combining nominal
/// constants, identified parameters and process noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveParams {
    pub l_f: f64,
    pub l_r: f64,
    pub h_cog: f64,
    pub yaw_inertia: f64,
    pub c_kf: f64,
    pub c_kr: f64,
    pub c_af: f64,
    pub c_ar: f64,
    pub relaxation_length: f64,
    pub static_load_front: f64,
    pub static_load_rear: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState {
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
    pub omega_f: f64,
    pub omega_r: f64,
    pub alpha_hat_f: f64,
    pub alpha_hat_r: f64,
    pub kappa_hat_f: f64,
    pub kappa_hat_r: f64,
}

impl VehicleState {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [
            self.vx,
            self.vy,
            self.yaw_rate,
            self.omega_f,
            self.omega_r,
            self.alpha_hat_f,
            self.alpha_hat_r,
            self.kappa_hat_f,
            self.kappa_hat_r,
        ]
    }

    pub fn from_array(a: &[f64; STATE_DIM]) -> Self {
        Self {
            vx: a[0],
            vy: a[1],
            yaw_rate: a[2],
            omega_f: a[3],
            omega_r: a[4],
            alpha_hat_f: a[5],
            alpha_hat_r: a[6],
            kappa_hat_f: a[7],
            kappa_hat_r: a[8],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Vehicle sideslip angle at the COG. Diagnostic only.
    pub fn sideslip(&self) -> f64 {
        (self.vy / self.vx).atan()
    }
}

/// Driver inputs. Braking torques are non-positive.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    pub steer: f64,
    pub traction_front: f64,
    pub traction_rear: f64,
    pub brake_front: f64,
    pub brake_rear: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TireForces {
    pub fx_f: f64,
    pub fx_r: f64,
    pub fy_f: f64,
    pub fy_r: f64,
    pub fz_f: f64,
    pub fz_r: f64,
}

impl TireForces {
    /// Body-frame specific force (a_x, a_y), excluding the velocity coupling terms.
    pub fn specific_force(&self, steer: f64, mass: f64) -> (f64, f64) {
        let (s, c) = steer.sin_cos();
        let ax = (self.fx_f * c - self.fy_f * s + self.fx_r) / mass;
        let ay = (self.fx_f * s + self.fy_f * c + self.fy_r) / mass;
        (ax, ay)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Measurement {
    pub ax: f64,
    pub ay: f64,
    pub yaw_rate: f64,
    pub omega_f: f64,
    pub omega_r: f64,
}

impl Measurement {
    pub const CHANNELS: [&'static str; MEASUREMENT_DIM] = ["a_x", "a_y", "r", "w_f", "w_r"];

    pub fn to_array(&self) -> [f64; MEASUREMENT_DIM] {
        [self.ax, self.ay, self.yaw_rate, self.omega_f, self.omega_r]
    }
}

/// Combine nominal constants, identified parameters and stiffness process
/// noise (`[kf, kr, af, ar]`, same units as the deviations).
pub fn resolve_params(
    constants: &VehicleConstants,
    theta: &IdentifiedParams,
    stiffness_noise: &[f64; 4],
) -> Result<EffectiveParams> {
    let l_f = theta.l_f;
    if !(l_f > 0.0 && l_f < constants.wheelbase) {
        return Err(Error::RejectedSample(format!("l_f = {l_f} outside (0, wheelbase)")));
    }
    if !(theta.h_cog > 0.0) {
        return Err(Error::RejectedSample(format!("h_cog = {} must be positive", theta.h_cog)));
    }
    let l_r = constants.wheelbase - l_f;
    let stiffness = |nominal: f64, deviation: f64, noise: f64| nominal + STIFFNESS_SCALE * (deviation + noise);
    let c_kf = stiffness(constants.long_stiffness_front, theta.d_ckf, stiffness_noise[0]);
    let c_kr = stiffness(constants.long_stiffness_rear, theta.d_ckr, stiffness_noise[1]);
    let c_af = stiffness(constants.cornering_stiffness_front, theta.d_caf, stiffness_noise[2]);
    let c_ar = stiffness(constants.cornering_stiffness_rear, theta.d_car, stiffness_noise[3]);
    for (name, c) in [("C_kf", c_kf), ("C_kr", c_kr), ("C_af", c_af), ("C_ar", c_ar)] {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::RejectedSample(format!("effective {name} = {c} is not positive")));
        }
    }
    let weight = constants.mass * constants.gravity;
    Ok(EffectiveParams {
        l_f,
        l_r,
        h_cog: theta.h_cog,
        yaw_inertia: constants.mass * l_f * l_r,
        c_kf,
        c_kr,
        c_af,
        c_ar,
        relaxation_length: c_af / constants.lateral_stiffness,
        static_load_front: weight * l_r / constants.wheelbase,
        static_load_rear: weight * l_f / constants.wheelbase,
    })
}

/// Instantaneous slip angles (front, rear). Rear steering is zero.
pub fn slip_angles(state: &VehicleState, input: &ControlInput, eff: &EffectiveParams) -> Result<(f64, f64)> {
    if !(state.vx > 0.0) {
        return Err(Error::InvalidState("longitudinal velocity must be positive"));
    }
    let vy_f = state.vy + eff.l_f * state.yaw_rate;
    let vy_r = state.vy - eff.l_r * state.yaw_rate;
    let alpha_f = -(vy_f / state.vx).atan() + input.steer;
    let alpha_r = -(vy_r / state.vx).atan();
    Ok((alpha_f, alpha_r))
}

/// Contact-patch velocities projected on each wheel's longitudinal axis.
pub fn wheel_longitudinal_velocities(
    state: &VehicleState,
    input: &ControlInput,
    eff: &EffectiveParams,
) -> (f64, f64) {
    let (s, c) = input.steer.sin_cos();
    let front = state.vx * c + (state.vy + eff.l_f * state.yaw_rate) * s;
    (front, state.vx)
}

/// Longitudinal slip of one wheel from its rolling speed `R_eff * omega`
/// and its ground speed along the wheel axis.
pub fn slip_ratio(rolling_speed: f64, ground_speed: f64) -> Result<f64> {
    let denom = rolling_speed.max(ground_speed);
    if !(denom > 0.0) {
        return Err(Error::InvalidState("wheel neither rolling nor moving forward"));
    }
    Ok((rolling_speed - ground_speed) / denom)
}

/// Instantaneous longitudinal slips (front, rear).
pub fn longitudinal_slips(
    state: &VehicleState,
    input: &ControlInput,
    eff: &EffectiveParams,
    r_eff_f: f64,
    r_eff_r: f64,
) -> Result<(f64, f64)> {
    let (v_f, v_r) = wheel_longitudinal_velocities(state, input, eff);
    Ok((slip_ratio(r_eff_f * state.omega_f, v_f)?, slip_ratio(r_eff_r * state.omega_r, v_r)?))
}

/// Effective rolling radius: two thirds free radius plus one third loaded radius,
/// where the loaded radius is the free radius less the static deflection.
pub fn effective_radius(fz: f64, constants: &VehicleConstants) -> Result<f64> {
    let loaded = constants.free_radius - fz / constants.vertical_stiffness;
    if !(loaded > 0.0) {
        return Err(Error::InvalidState("loaded tire radius is not positive"));
    }
    Ok(2.0 / 3.0 * constants.free_radius + loaded / 3.0)
}

/// Vertical axle loads under longitudinal acceleration `ax`.
pub fn axle_loads(eff: &EffectiveParams, constants: &VehicleConstants, ax: f64) -> Result<(f64, f64)> {
    let transfer = constants.mass * ax * eff.h_cog / constants.wheelbase;
    let front = eff.static_load_front - transfer;
    let rear = eff.static_load_rear + transfer;
    if !(front > 0.0 && rear > 0.0) {
        return Err(Error::InvalidState("axle load is not positive"));
    }
    Ok((front, rear))
}

/// Dugoff saturation factor.
#[inline]
pub fn dugoff_saturation(lambda: f64) -> f64 {
    if lambda < 1.0 {
        (2.0 - lambda) * lambda
    } else {
        1.0
    }
}

/// Dugoff combined-slip tire forces (F_x, F_y) in the wheel frame.
pub fn dugoff_forces(kappa: f64, alpha: f64, fz: f64, c_kappa: f64, c_alpha: f64, mu: f64) -> Result<(f64, f64)> {
    let one_plus = 1.0 + kappa;
    if !(one_plus > 0.0) {
        return Err(Error::InvalidState("longitudinal slip at or below -1"));
    }
    let long = c_kappa * kappa;
    let lat = c_alpha * alpha.tan();
    let demand = long.hypot(lat);
    if demand == 0.0 {
        return Ok((0.0, 0.0));
    }
    let lambda = mu * fz * one_plus / (2.0 * demand);
    let f = dugoff_saturation(lambda);
    Ok((long / one_plus * f, lat / one_plus * f))
}

/// Tire forces from the delayed slips carried in the state, with axle loads
/// evaluated at longitudinal acceleration `ax`.
pub fn tire_forces(
    state: &VehicleState,
    eff: &EffectiveParams,
    constants: &VehicleConstants,
    ax: f64,
) -> Result<TireForces> {
    let (fz_f, fz_r) = axle_loads(eff, constants, ax)?;
    let mu = constants.friction;
    let (fx_f, fy_f) = dugoff_forces(state.kappa_hat_f, state.alpha_hat_f, fz_f, eff.c_kf, eff.c_af, mu)?;
    let (fx_r, fy_r) = dugoff_forces(state.kappa_hat_r, state.alpha_hat_r, fz_r, eff.c_kr, eff.c_ar, mu)?;
    Ok(TireForces { fx_f, fx_r, fy_f, fy_r, fz_f, fz_r })
}

/// Solve the load-transfer loop (loads depend on a_x, a_x on the forces,
/// the forces on the loads) by fixed-point iteration starting at `ax_guess`.
pub fn consistent_forces(
    state: &VehicleState,
    input: &ControlInput,
    eff: &EffectiveParams,
    constants: &VehicleConstants,
    ax_guess: f64,
) -> Result<(TireForces, f64)> {
    let mut ax = ax_guess;
    for _ in 0..MAX_LOAD_ITERATIONS {
        let forces = tire_forces(state, eff, constants, ax)?;
        let (next, _) = forces.specific_force(input.steer, constants.mass);
        if (next - ax).abs() <= 1e-13 * (1.0 + next.abs()) {
            return Ok((forces, next));
        }
        ax = next;
    }
    Ok((tire_forces(state, eff, constants, ax)?, ax))
}

/// Time derivative of the 9-state model; also returns the consistent a_x,
/// which the caller feeds back as the next iteration guess.
pub fn state_derivative(
    state: &VehicleState,
    input: &ControlInput,
    eff: &EffectiveParams,
    constants: &VehicleConstants,
    ax_guess: f64,
) -> Result<([f64; STATE_DIM], f64)> {
    if !(state.vx > 0.0) {
        return Err(Error::InvalidState("longitudinal velocity must be positive"));
    }
    let (forces, ax) = consistent_forces(state, input, eff, constants, ax_guess)?;
    let r_eff_f = effective_radius(forces.fz_f, constants)?;
    let r_eff_r = effective_radius(forces.fz_r, constants)?;
    let (alpha_f, alpha_r) = slip_angles(state, input, eff)?;
    let (kappa_f, kappa_r) = longitudinal_slips(state, input, eff, r_eff_f, r_eff_r)?;

    let m = constants.mass;
    let (s, c) = input.steer.sin_cos();
    let front_lateral = forces.fx_f * s + forces.fy_f * c;
    let vx_dot = (forces.fx_f * c - forces.fy_f * s + forces.fx_r) / m + state.vy * state.yaw_rate;
    let vy_dot = (front_lateral + forces.fy_r) / m - state.vx * state.yaw_rate;
    let r_dot = (eff.l_f * front_lateral - eff.l_r * forces.fy_r) / eff.yaw_inertia;

    let iw = constants.wheel_inertia;
    let omega_f_dot = (input.traction_front + input.brake_front - forces.fx_f * r_eff_f) / iw;
    let omega_r_dot = (input.traction_rear + input.brake_rear - forces.fx_r * r_eff_r) / iw;

    let rate = state.vx / eff.relaxation_length;
    Ok((
        [
            vx_dot,
            vy_dot,
            r_dot,
            omega_f_dot,
            omega_r_dot,
            rate * (alpha_f - state.alpha_hat_f),
            rate * (alpha_r - state.alpha_hat_r),
            rate * (kappa_f - state.kappa_hat_f),
            rate * (kappa_r - state.kappa_hat_r),
        ],
        ax,
    ))
}

/// Clean sensor readings for a state and the forces acting on it.
pub fn measurement_of(state: &VehicleState, input: &ControlInput, forces: &TireForces, mass: f64) -> Measurement {
    let (ax, ay) = forces.specific_force(input.steer, mass);
    Measurement { ax, ay, yaw_rate: state.yaw_rate, omega_f: state.omega_f, omega_r: state.omega_r }
}

/// Rolling equilibrium at forward speed `vx`: no slip, no lateral motion.
pub fn rolling_equilibrium(vx: f64, eff: &EffectiveParams, constants: &VehicleConstants) -> Result<VehicleState> {
    let r_f = effective_radius(eff.static_load_front, constants)?;
    let r_r = effective_radius(eff.static_load_rear, constants)?;
    Ok(VehicleState { vx, omega_f: vx / r_f, omega_r: vx / r_r, ..Default::default() })
}
