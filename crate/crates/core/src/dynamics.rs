//! Vehicle models.
//!
//! Both steppers take the state at the rear axle. [`kbm_step`] is the
//! slip-free kinematic bicycle model the planner predicts with; [`dynamic_step`]
//! is a single-track model with linear tires whose lateral forces saturate at
//! the friction limit, standing in for the real slippery surface. Both are pure
//! functions of their inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Pose};

pub const GRAVITY: f64 = 9.81;

/// Below this speed the single-track model falls back to kinematic motion;
/// the tire slip equations are singular at standstill.
pub const LOW_SPEED_SWITCH: f64 = 0.1;

/// Largest internal RK4 step of the single-track model. The tire equations are
/// stiff near [`LOW_SPEED_SWITCH`].
pub const MAX_DYNAMIC_SUBSTEP: f64 = 0.002;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Heading in (−π, π].
    pub yaw: f64,
    /// Longitudinal speed.
    pub v: f64,
    /// Lateral speed at the rear axle; always 0 under the kinematic model.
    pub v_lat: f64,
    pub yaw_rate: f64,
    /// Realized steering angle.
    pub delta: f64,
}

impl VehicleState {
    pub fn at_rest(pose: Pose) -> Self {
        Self {
            x: pose.x,
            y: pose.y,
            yaw: normalize_angle(pose.yaw),
            ..Self::default()
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.yaw)
    }

    pub fn is_finite(&self) -> bool {
        [
            self.x,
            self.y,
            self.yaw,
            self.v,
            self.v_lat,
            self.yaw_rate,
            self.delta,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlCommand {
    /// Commanded speed, m/s.
    pub speed: f64,
    /// Commanded steering angle, rad.
    pub steering: f64,
}

impl ControlCommand {
    pub const ZERO: Self = Self::new(0.0, 0.0);

    pub const fn new(speed: f64, steering: f64) -> Self {
        Self { speed, steering }
    }

    pub fn is_finite(&self) -> bool {
        self.speed.is_finite() && self.steering.is_finite()
    }
}

/// Physical parameters of the 1/10-scale vehicle. The center of gravity sits
/// midway between the axles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub mass: f64,
    pub yaw_inertia: f64,
    pub cornering_stiffness_front: f64,
    pub cornering_stiffness_rear: f64,
    /// Tire-road friction coefficient.
    pub mu: f64,
    pub v_max: f64,
    pub delta_max: f64,
    pub accel_time_constant: f64,
    pub steer_time_constant: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 0.33,
            mass: 3.5,
            yaw_inertia: 0.05,
            cornering_stiffness_front: 80.0,
            cornering_stiffness_rear: 80.0,
            mu: 0.25,
            v_max: 3.0,
            delta_max: 0.4,
            accel_time_constant: 0.15,
            steer_time_constant: 0.1,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("wheelbase", self.wheelbase),
            ("mass", self.mass),
            ("yaw_inertia", self.yaw_inertia),
            ("cornering_stiffness_front", self.cornering_stiffness_front),
            ("cornering_stiffness_rear", self.cornering_stiffness_rear),
            ("mu", self.mu),
            ("delta_max", self.delta_max),
            ("accel_time_constant", self.accel_time_constant),
            ("steer_time_constant", self.steer_time_constant),
        ];
        for (name, value) in named {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!(
                    "vehicle.{name} must be > 0, got {value}"
                )));
            }
        }
        if !(self.v_max.is_finite() && self.v_max >= 0.0) {
            return Err(Error::Config(format!(
                "vehicle.v_max must be ≥ 0, got {}",
                self.v_max
            )));
        }
        if self.mu > 2.0 {
            return Err(Error::Config(format!(
                "vehicle.mu must lie in (0, 2], got {}",
                self.mu
            )));
        }
        Ok(())
    }

    fn cg_to_front(&self) -> f64 {
        0.5 * self.wheelbase
    }

    fn cg_to_rear(&self) -> f64 {
        0.5 * self.wheelbase
    }
}

/// Componentwise clamp into `[−v_max, v_max] × [−delta_max, delta_max]`.
pub fn clamp_command(cmd: ControlCommand, params: &VehicleParams) -> ControlCommand {
    ControlCommand {
        speed: cmd.speed.clamp(-params.v_max, params.v_max),
        steering: cmd.steering.clamp(-params.delta_max, params.delta_max),
    }
}

fn check_inputs(state: &VehicleState, cmd: &ControlCommand, dt: f64) -> Result<()> {
    if !state.is_finite() {
        return Err(Error::NonFinite(format!("state {state:?}")));
    }
    if !cmd.is_finite() {
        return Err(Error::NonFinite(format!("command {cmd:?}")));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Config(format!("step size must be > 0, got {dt}")));
    }
    Ok(())
}

fn check_output(state: VehicleState) -> Result<VehicleState> {
    if state.is_finite() {
        Ok(state)
    } else {
        Err(Error::NonFinite(format!("integration produced {state:?}")))
    }
}

#[inline]
fn rk4<const N: usize>(y: [f64; N], h: f64, f: impl Fn(&[f64; N]) -> [f64; N]) -> [f64; N] {
    let axpy = |base: &[f64; N], k: &[f64; N], s: f64| -> [f64; N] {
        let mut out = *base;
        for i in 0..N {
            out[i] += s * k[i];
        }
        out
    };
    let k1 = f(&y);
    let k2 = f(&axpy(&y, &k1, 0.5 * h));
    let k3 = f(&axpy(&y, &k2, 0.5 * h));
    let k4 = f(&axpy(&y, &k3, h));
    let mut out = y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// One RK4 step of the kinematic model over [x, y, yaw, v, delta].
#[inline]
fn kinematic_rk4(
    state: &VehicleState,
    cmd: ControlCommand,
    p: &VehicleParams,
    h: f64,
) -> VehicleState {
    let inv_tau_v = 1.0 / p.accel_time_constant;
    let inv_tau_d = 1.0 / p.steer_time_constant;
    let inv_l = 1.0 / p.wheelbase;
    let y = [state.x, state.y, state.yaw, state.v, state.delta];
    let out = rk4(y, h, |s| {
        let (sin, cos) = s[2].sin_cos();
        [
            s[3] * cos,
            s[3] * sin,
            s[3] * s[4].tan() * inv_l,
            (cmd.speed - s[3]) * inv_tau_v,
            (cmd.steering - s[4]) * inv_tau_d,
        ]
    });
    VehicleState {
        x: out[0],
        y: out[1],
        yaw: normalize_angle(out[2]),
        v: out[3],
        v_lat: 0.0,
        yaw_rate: out[3] * out[4].tan() * inv_l,
        delta: out[4],
    }
}

/// Kinematic bicycle model, one fixed RK4 step of size `dt`.
///
/// `ẋ = v cos ψ`, `ẏ = v sin ψ`, `ψ̇ = v tan δ / L`, with first-order lag of the
/// realized speed and steering toward the (clamped) command.
pub fn kbm_step(
    state: &VehicleState,
    cmd: ControlCommand,
    params: &VehicleParams,
    dt: f64,
) -> Result<VehicleState> {
    check_inputs(state, &cmd, dt)?;
    let cmd = clamp_command(cmd, params);
    check_output(kinematic_rk4(state, cmd, params, dt))
}

/// Single-track model with linear tires saturated at `μ·m·g/2` per axle and a
/// traction-limited longitudinal response. Integrated with fixed RK4 substeps
/// no longer than [`MAX_DYNAMIC_SUBSTEP`].
pub fn dynamic_step(
    state: &VehicleState,
    cmd: ControlCommand,
    params: &VehicleParams,
    dt: f64,
) -> Result<VehicleState> {
    check_inputs(state, &cmd, dt)?;
    let cmd = clamp_command(cmd, params);
    let n = (dt / MAX_DYNAMIC_SUBSTEP).ceil().max(1.0) as usize;
    let h = dt / n as f64;
    let mut s = *state;
    for _ in 0..n {
        s = if s.v.abs() < LOW_SPEED_SWITCH {
            kinematic_rk4(&s, cmd, params, h)
        } else {
            single_track_rk4(&s, cmd, params, h)
        };
    }
    check_output(s)
}

#[inline]
fn single_track_rk4(
    state: &VehicleState,
    cmd: ControlCommand,
    p: &VehicleParams,
    h: f64,
) -> VehicleState {
    let inv_tau_v = 1.0 / p.accel_time_constant;
    let inv_tau_d = 1.0 / p.steer_time_constant;
    let (lf, lr, l) = (p.cg_to_front(), p.cg_to_rear(), p.wheelbase);
    let f_max = 0.5 * p.mu * p.mass * GRAVITY;
    let a_max = p.mu * GRAVITY;
    let y = [
        state.x,
        state.y,
        state.yaw,
        state.v,
        state.v_lat,
        state.yaw_rate,
        state.delta,
    ];
    let out = rk4(y, h, |s| {
        let (u, vr, r, delta) = (s[3], s[4], s[5], s[6]);
        let (sin_yaw, cos_yaw) = s[2].sin_cos();
        let (sin_d, cos_d) = delta.sin_cos();
        let speed = u.abs().max(LOW_SPEED_SWITCH);
        // Lateral velocity of each tire in its own frame; the tire force opposes it.
        let front_slip = (vr + l * r) * cos_d - u * sin_d;
        let f_front = (-p.cornering_stiffness_front * front_slip / speed).clamp(-f_max, f_max);
        let f_rear = (-p.cornering_stiffness_rear * vr / speed).clamp(-f_max, f_max);
        let r_dot = (lf * f_front * cos_d - lr * f_rear) / p.yaw_inertia;
        let vg_dot = (f_front * cos_d + f_rear) / p.mass - u * r;
        [
            u * cos_yaw - vr * sin_yaw,
            u * sin_yaw + vr * cos_yaw,
            r,
            ((cmd.speed - u) * inv_tau_v).clamp(-a_max, a_max),
            vg_dot - lr * r_dot,
            r_dot,
            (cmd.steering - delta) * inv_tau_d,
        ]
    });
    VehicleState {
        x: out[0],
        y: out[1],
        yaw: normalize_angle(out[2]),
        v: out[3],
        v_lat: out[4],
        yaw_rate: out[5],
        delta: out[6],
    }
}

/// Loose upper bound on the rear-axle ground speed reachable from `state`
/// within a short horizon.
pub fn speed_bound(state: &VehicleState, params: &VehicleParams) -> f64 {
    state.v.abs().max(params.v_max) + state.v_lat.abs() + 1.0
}

/// Which model a planner rolls out with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveModel {
    #[default]
    Kinematic,
    /// The ground-truth single-track model; used for the model-mismatch oracle.
    Dynamic,
}

impl PredictiveModel {
    pub fn step(
        self,
        state: &VehicleState,
        cmd: ControlCommand,
        params: &VehicleParams,
        dt: f64,
    ) -> Result<VehicleState> {
        match self {
            PredictiveModel::Kinematic => kbm_step(state, cmd, params, dt),
            PredictiveModel::Dynamic => dynamic_step(state, cmd, params, dt),
        }
    }
}
