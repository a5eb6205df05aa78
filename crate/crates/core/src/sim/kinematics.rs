use serde::{Deserialize, Serialize};

use crate::geom::{normalize_angle, Vec2};

/// Kinematic bicycle parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub wheelbase: f64,
    /// Steering angle at |steer| = 1, radians.
    pub max_steer: f64,
    /// Acceleration at accel = +1, m/s^2.
    pub accel_scale: f64,
    /// Deceleration at accel = -1, m/s^2.
    pub brake_scale: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.8,
            max_steer: 40f64.to_radians(),
            accel_scale: 2.5,
            brake_scale: 5.0,
        }
    }
}

/// Normalized control command; both components live in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub steer: f64,
    pub accel: f64,
}

impl Action {
    /// Clips both components into `[-1, 1]`.
    pub fn new(steer: f64, accel: f64) -> Self {
        Self {
            steer: steer.clamp(-1.0, 1.0),
            accel: accel.clamp(-1.0, 1.0),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.steer.is_finite() && self.accel.is_finite()
    }

    pub fn clipped(self) -> Self {
        Self::new(self.steer, self.accel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicState {
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
}

/// One explicit-Euler step of the kinematic bicycle. Speed never goes negative.
pub fn kinematic_step(p: &VehicleParams, state: KinematicState, action: Action, dt: f64) -> KinematicState {
    let action = action.clipped();
    let steer_angle = action.steer * p.max_steer;
    let accel = if action.accel >= 0.0 {
        action.accel * p.accel_scale
    } else {
        action.accel * p.brake_scale
    };
    let v = state.speed;
    KinematicState {
        position: state.position + Vec2::from_angle(state.heading) * (v * dt),
        heading: normalize_angle(state.heading + v * steer_angle.tan() / p.wheelbase * dt),
        speed: (v + accel * dt).max(0.0),
    }
}
