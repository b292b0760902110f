//! Differential-drive kinematics and the battery model.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, Pose2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatteryConfig {
    /// Joules.
    pub capacity: f64,
    /// Watts drawn regardless of motion.
    pub idle_power: f64,
    /// Watts per m/s of linear speed.
    pub k_linear: f64,
    /// Watts per rad/s of angular speed.
    pub k_angular: f64,
    /// Watts delivered by the charger.
    pub charge_rate: f64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        // 150 W at 1 m/s straight: 972 kJ lasts 6480 s (1.8 h).
        Self {
            capacity: 972_000.0,
            idle_power: 60.0,
            k_linear: 90.0,
            k_angular: 20.0,
            charge_rate: 400.0,
        }
    }
}

impl BatteryConfig {
    pub fn power(&self, v: f64, w: f64) -> f64 {
        self.idle_power + self.k_linear * v.abs() + self.k_angular * w.abs()
    }

    /// Joules per metre at speed `v` while also turning at `w_max`.
    pub fn worst_case_per_metre(&self, v: f64, w_max: f64) -> f64 {
        self.power(v, w_max) / v.abs().max(1e-6)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotConfig {
    pub v_max: f64,
    pub w_max: f64,
    /// Multiplicative 1-sigma error on executed linear speed.
    pub linear_noise: f64,
    /// Additive 1-sigma error on executed angular speed, rad/s.
    pub angular_noise: f64,
    pub battery: BatteryConfig,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            w_max: 2.0,
            linear_noise: 0.02,
            angular_noise: 0.01,
            battery: BatteryConfig::default(),
        }
    }
}

impl RobotConfig {
    pub fn noiseless(mut self) -> Self {
        self.linear_noise = 0.0;
        self.angular_noise = 0.0;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose2,
    pub linear_velocity: f64,
    pub angular_velocity: f64,
    pub battery: f64,
    pub odometer: f64,
    pub estop: bool,
    /// Set once the battery hits zero; the robot no longer moves.
    pub battery_empty: bool,
}

impl RobotState {
    pub fn new(pose: Pose2, battery: f64) -> Self {
        Self {
            pose,
            linear_velocity: 0.0,
            angular_velocity: 0.0,
            battery,
            odometer: 0.0,
            estop: false,
            battery_empty: battery <= 0.0,
        }
    }
}

/// Velocity command `(v, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Command {
    pub v: f64,
    pub w: f64,
}

impl Command {
    pub const STOP: Command = Command { v: 0.0, w: 0.0 };

    pub fn new(v: f64, w: f64) -> Self {
        Self { v, w }
    }

    pub fn clamped(self, v_max: f64, w_max: f64) -> Self {
        let v = if self.v.is_finite() { self.v.clamp(-v_max, v_max) } else { 0.0 };
        let w = if self.w.is_finite() { self.w.clamp(-w_max, w_max) } else { 0.0 };
        Self { v, w }
    }

    pub fn is_stop(&self) -> bool {
        self.v == 0.0 && self.w == 0.0
    }
}

/// Exact pose after moving at constant `(v, w)` for `dt`.
pub fn integrate_unicycle(pose: &Pose2, v: f64, w: f64, dt: f64) -> Pose2 {
    let th = pose.theta;
    let dth = w * dt;
    let (dx, dy) = if dth.abs() < 1e-9 {
        // Second-order expansion avoids dividing by a vanishing w.
        let mid = th + 0.5 * dth;
        (v * dt * mid.cos(), v * dt * mid.sin())
    } else {
        let r = v / w;
        (r * ((th + dth).sin() - th.sin()), -r * ((th + dth).cos() - th.cos()))
    };
    Pose2 {
        x: pose.x + dx,
        y: pose.y + dy,
        theta: normalize_angle(th + dth),
    }
}

/// Advance the robot by one tick. The command is clamped to actuator limits,
/// zeroed by estop or an empty battery, then perturbed by actuation noise.
pub fn step<R: Rng + ?Sized>(
    cfg: &RobotConfig,
    state: &RobotState,
    command: Command,
    dt: f64,
    rng: &mut R,
) -> RobotState {
    let mut next = *state;
    let cmd = if state.estop || state.battery_empty {
        Command::STOP
    } else {
        command.clamped(cfg.v_max, cfg.w_max)
    };
    let (mut v, mut w) = (cmd.v, cmd.w);
    // Noise draws happen every tick so stream positions do not depend on motion.
    let nv: f64 = StandardNormal.sample(rng);
    let nw: f64 = StandardNormal.sample(rng);
    if !cmd.is_stop() {
        v *= 1.0 + cfg.linear_noise * nv;
        w += cfg.angular_noise * nw;
    }
    next.pose = integrate_unicycle(&state.pose, v, w, dt);
    next.linear_velocity = v;
    next.angular_velocity = w;
    next.odometer += v.abs() * dt;
    next.battery = (state.battery - cfg.battery.power(v, w) * dt).max(0.0);
    if next.battery <= 0.0 {
        next.battery_empty = true;
    }
    next
}

/// Add charge for `dt` seconds, capped at capacity.
pub fn charge(cfg: &BatteryConfig, state: &RobotState, dt: f64) -> RobotState {
    let mut next = *state;
    next.battery = (state.battery + cfg.charge_rate * dt).min(cfg.capacity);
    if next.battery > 0.0 {
        next.battery_empty = false;
    }
    next.linear_velocity = 0.0;
    next.angular_velocity = 0.0;
    next
}
