use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const MAX_STEER: f64 = 0.5;

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

pub fn clamp_steer(delta: f64) -> f64 {
    if delta.is_nan() {
        0.0
    } else {
        delta.clamp(-MAX_STEER, MAX_STEER)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose {
            x,
            y,
            heading: wrap_angle(heading),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub pose: Pose,
    pub speed: f64,
    pub steering: f64,
}

impl VehicleState {
    pub fn at(pose: Pose) -> Self {
        VehicleState {
            pose,
            speed: 0.0,
            steering: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub v_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            wheelbase: 0.26,
            v_max: 1.0,
        }
    }
}

/// One explicit-Euler step of the kinematic bicycle (rear-axle reference).
pub fn step_kinematics(
    state: &VehicleState,
    steering_cmd: f64,
    throttle_cmd: f64,
    dt: f64,
    params: &VehicleParams,
) -> Result<VehicleState> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if !(0.0..=1.0).contains(&throttle_cmd) {
        return Err(Error::invalid(format!(
            "throttle must be in [0, 1], got {throttle_cmd}"
        )));
    }
    let delta = clamp_steer(steering_cmd);
    let v = throttle_cmd * params.v_max;
    let p = state.pose;
    let pose = Pose::new(
        p.x + v * p.heading.cos() * dt,
        p.y + v * p.heading.sin() * dt,
        p.heading + v * delta.tan() / params.wheelbase * dt,
    );
    Ok(VehicleState {
        pose,
        speed: v,
        steering: delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_keeps_pi_and_maps_minus_pi() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.25) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn straight_line_step() {
        let s = VehicleState::at(Pose::new(0.0, 0.0, 0.0));
        let n = step_kinematics(&s, 0.0, 0.3, 0.02, &VehicleParams::default()).unwrap();
        assert!((n.pose.x - 0.006).abs() < 1e-15);
        assert_eq!(n.pose.y, 0.0);
        assert_eq!(n.pose.heading, 0.0);
    }

    #[test]
    fn rejects_bad_dt() {
        let s = VehicleState::at(Pose::new(0.0, 0.0, 0.0));
        assert!(step_kinematics(&s, 0.0, 0.3, 0.0, &VehicleParams::default()).is_err());
        assert!(step_kinematics(&s, 0.0, 0.3, -1.0, &VehicleParams::default()).is_err());
    }
}
