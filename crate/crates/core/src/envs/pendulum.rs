//! Torque-limited inverted pendulum.
//!
//! `θ` is measured from the hanging position, so `θ = π` is upright and the
//! dynamics read `θ̈ = -(g/ℓ)·sin θ + u/(mℓ²)`. Integration is semi-implicit
//! Euler with the angular velocity clamped to `±max_speed`; the stored angle is
//! wrapped into `[0, 2π)`.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MdpError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumSpec {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub max_torque: f64,
    pub max_speed: f64,
    pub dt: f64,
    pub episode_length: usize,
    /// Start offsets from upright are uniform in `±init_angle`.
    pub init_angle: f64,
    /// Start velocities are uniform in `±init_speed`.
    pub init_speed: f64,
}

impl Default for PendulumSpec {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: 9.8,
            max_torque: 2.0,
            max_speed: 8.0,
            dt: 0.05,
            episode_length: 200,
            init_angle: 0.15,
            init_speed: 0.1,
        }
    }
}

impl PendulumSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("length", self.length),
            ("dt", self.dt),
            ("max_speed", self.max_speed),
        ];
        for (name, x) in positive {
            if !(x > 0.0 && x.is_finite()) {
                return Err(MdpError::Invalid(format!("pendulum {name} must be positive")));
            }
        }
        if !(self.max_torque >= 0.0) || self.episode_length == 0 {
            return Err(MdpError::Invalid("pendulum torque/episode length invalid".into()));
        }
        Ok(())
    }

    /// Largest per-step cost; rewards are `1 - cost / max_cost`.
    pub fn max_cost(&self) -> f64 {
        PI * PI + 0.1 * self.max_speed.powi(2) + 0.001 * self.max_torque.powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
}

impl PendulumState {
    pub fn new(theta: f64, theta_dot: f64) -> Self {
        Self { theta, theta_dot }
    }

    /// Signed offset from upright in `[-π, π)`.
    pub fn upright_offset(&self) -> f64 {
        wrap_pi(self.theta - PI)
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.theta, self.theta_dot]
    }
}

pub fn wrap_pi(x: f64) -> f64 {
    (x + PI).rem_euclid(TAU) - PI
}

/// Random semi-upright start.
pub fn pendulum_reset(spec: &PendulumSpec, rng: &mut impl Rng) -> PendulumState {
    let offset = rng.random_range(-1.0..=1.0) * spec.init_angle;
    let speed = rng.random_range(-1.0..=1.0) * spec.init_speed;
    PendulumState::new((PI + offset).rem_euclid(TAU), speed)
}

/// Per-step reward in `[0, 1]`.
pub fn pendulum_reward(spec: &PendulumSpec, state: &PendulumState, torque: f64) -> f64 {
    let off = state.upright_offset();
    let cost = off * off + 0.1 * state.theta_dot.powi(2) + 0.001 * torque * torque;
    (1.0 - cost / spec.max_cost()).clamp(0.0, 1.0)
}

/// One integration step. The reward is charged on the pre-step state.
pub fn pendulum_step(
    spec: &PendulumSpec,
    state: &PendulumState,
    torque: f64,
) -> Result<(PendulumState, f64)> {
    if !state.theta.is_finite() || !state.theta_dot.is_finite() || !torque.is_finite() {
        return Err(MdpError::Invalid("non-finite pendulum state or torque".into()));
    }
    if torque.abs() > spec.max_torque + 1e-12 {
        return Err(MdpError::Invalid(format!(
            "torque {torque} exceeds limit {}",
            spec.max_torque
        )));
    }
    let reward = pendulum_reward(spec, state, torque);
    let accel = -(spec.gravity / spec.length) * state.theta.sin()
        + torque / (spec.mass * spec.length * spec.length);
    let theta_dot = (state.theta_dot + accel * spec.dt).clamp(-spec.max_speed, spec.max_speed);
    let theta = (state.theta + theta_dot * spec.dt).rem_euclid(TAU);
    Ok((PendulumState::new(theta, theta_dot), reward))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn energy(spec: &PendulumSpec, theta: f64, theta_dot: f64) -> f64 {
        let (m, l, g) = (spec.mass, spec.length, spec.gravity);
        0.5 * m * l * l * theta_dot * theta_dot + m * g * l * (1.0 - theta.cos())
    }

    #[test]
    fn upright_is_a_fixed_point() {
        let spec = PendulumSpec::default();
        let mut s = PendulumState::new(PI, 0.0);
        for _ in 0..10 {
            s = pendulum_step(&spec, &s, 0.0).unwrap().0;
        }
        assert!((s.theta - PI).abs() < 1e-9 && s.theta_dot.abs() < 1e-9);
    }

    #[test]
    fn positive_torque_spins_up() {
        let spec = PendulumSpec::default();
        let s = PendulumState::new(PI, 0.0);
        let (next, _) = pendulum_step(&spec, &s, spec.max_torque).unwrap();
        assert!(next.theta_dot > 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let spec = PendulumSpec::default();
        assert!(pendulum_step(&spec, &PendulumState::new(f64::NAN, 0.0), 0.0).is_err());
        assert!(pendulum_step(&spec, &PendulumState::new(0.0, 0.0), 3.0).is_err());
    }

    /// Classical RK4 on the unclamped passive dynamics.
    fn rk4_oracle(spec: &PendulumSpec, theta: f64, theta_dot: f64, dt: f64, steps: usize) -> (f64, f64) {
        let f = |th: f64, om: f64| (om, -(spec.gravity / spec.length) * th.sin());
        let (mut th, mut om) = (theta, theta_dot);
        for _ in 0..steps {
            let k1 = f(th, om);
            let k2 = f(th + 0.5 * dt * k1.0, om + 0.5 * dt * k1.1);
            let k3 = f(th + 0.5 * dt * k2.0, om + 0.5 * dt * k2.1);
            let k4 = f(th + dt * k3.0, om + dt * k3.1);
            th += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            om += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        (th, om)
    }

    #[test]
    fn passive_swing_conserves_energy() {
        let spec = PendulumSpec {
            dt: 0.01,
            ..PendulumSpec::default()
        };
        let start = PendulumState::new(1.0, 0.0);
        let e0 = energy(&spec, start.theta, start.theta_dot);
        let mut s = start;
        for _ in 0..100 {
            s = pendulum_step(&spec, &s, 0.0).unwrap().0;
        }
        let e1 = energy(&spec, s.theta, s.theta_dot);
        assert!((e1 - e0).abs() / e0 < 0.01);

        // Ten-times finer reference trajectory.
        let (th, om) = rk4_oracle(&spec, 1.0, 0.0, 0.001, 1000);
        assert!((energy(&spec, th, om) - e0).abs() / e0 < 1e-6);
        assert!(wrap_pi(s.theta - th).abs() < 0.02, "{} vs {th}", s.theta);
    }

    #[test]
    fn speed_is_clamped_and_reward_bounded() {
        let spec = PendulumSpec::default();
        let mut s = PendulumState::new(0.3, 7.9);
        for _ in 0..500 {
            let (next, r) = pendulum_step(&spec, &s, spec.max_torque).unwrap();
            assert!(next.theta_dot.abs() <= spec.max_speed);
            assert!((0.0..=1.0).contains(&r));
            assert!((0.0..TAU).contains(&next.theta));
            s = next;
        }
    }
}
