use crate::augment::normalize_image;
use crate::error::{Error, Result};
use crate::expert::{pure_pursuit_steer, ExpertConfig};
use crate::image::ImageU8;
use crate::models::ModelBundle;
use crate::nn::Tensor;
use crate::simworld::{clamp_steer, step_kinematics, Camera, CameraConfig, TrackSpec, VehicleParams, VehicleState};
use serde::{Deserialize, Serialize};

/// Anything that maps the current camera frame (and, for privileged
/// controllers, the true state) to a steering command.
pub trait Policy {
    fn steer(&mut self, frame: &ImageU8, state: &VehicleState, track: &TrackSpec) -> Result<f64>;

    /// Whether `steer` looks at the frame; rendering is skipped otherwise.
    fn needs_frame(&self) -> bool {
        true
    }
}

impl Policy for ModelBundle {
    fn steer(&mut self, frame: &ImageU8, _state: &VehicleState, _track: &TrackSpec) -> Result<f64> {
        let x = Tensor::stack(&[normalize_image(frame)])?;
        Ok(self.predict(&x)?[0])
    }
}

/// The pure-pursuit expert, driving from the true pose.
#[derive(Clone, Copy, Debug)]
pub struct ExpertPolicy {
    pub lookahead: f64,
    pub wheelbase: f64,
}

impl Default for ExpertPolicy {
    fn default() -> Self {
        ExpertPolicy {
            lookahead: ExpertConfig::default().lookahead,
            wheelbase: VehicleParams::default().wheelbase,
        }
    }
}

impl Policy for ExpertPolicy {
    fn steer(&mut self, _frame: &ImageU8, state: &VehicleState, track: &TrackSpec) -> Result<f64> {
        pure_pursuit_steer(state, track, self.lookahead, self.wheelbase)
    }

    fn needs_frame(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConstantPolicy(pub f64);

impl Policy for ConstantPolicy {
    fn steer(&mut self, _: &ImageU8, _: &VehicleState, _: &TrackSpec) -> Result<f64> {
        Ok(self.0)
    }

    fn needs_frame(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClosedLoopConfig {
    pub max_steps: usize,
    pub dt: f64,
    pub throttle: f64,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        ClosedLoopConfig {
            max_steps: 5000,
            dt: 0.02,
            throttle: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopResult {
    pub completed_lap: bool,
    pub steps_survived: usize,
    pub mean_abs_cte: f64,
    pub max_abs_cte: f64,
    /// Seconds, when the lap was completed.
    pub lap_time: Option<f64>,
}

/// Drive `policy` from the centerline at arc 0 until one lap of arc-length
/// progress, an excursion beyond one lane width, or `max_steps`.
pub fn closed_loop_eval(
    policy: &mut dyn Policy,
    track: &TrackSpec,
    cfg: &ClosedLoopConfig,
    camera: &CameraConfig,
    vehicle: &VehicleParams,
) -> Result<ClosedLoopResult> {
    if cfg.max_steps == 0 {
        return Err(Error::invalid("max_steps must be at least 1"));
    }
    let cam = Camera::new(*camera);
    let blank = ImageU8::new(1, 1, 3);
    let length = track.length();
    let mut state = VehicleState::at(track.pose_at(0.0));
    let mut s_prev = track.nearest(state.pose.x, state.pose.y).s;
    let mut progress = 0.0;
    let (mut sum_cte, mut max_cte) = (0.0f64, 0.0f64);
    let mut steps = 0;
    let mut completed = false;
    while steps < cfg.max_steps {
        let frame = if policy.needs_frame() {
            cam.render(&state, track)
        } else {
            blank.clone()
        };
        let steer = clamp_steer(policy.steer(&frame, &state, track)?);
        state = step_kinematics(&state, steer, cfg.throttle, cfg.dt, vehicle)?;
        steps += 1;
        let near = track.nearest(state.pose.x, state.pose.y);
        let mut ds = near.s - s_prev;
        if ds > length / 2.0 {
            ds -= length;
        } else if ds < -length / 2.0 {
            ds += length;
        }
        progress += ds;
        s_prev = near.s;
        let cte = near.cte.abs();
        sum_cte += cte;
        max_cte = max_cte.max(cte);
        if cte > track.lane_width {
            break;
        }
        if progress >= length {
            completed = true;
            break;
        }
    }
    Ok(ClosedLoopResult {
        completed_lap: completed,
        steps_survived: steps,
        mean_abs_cte: sum_cte / steps as f64,
        max_abs_cte: max_cte,
        lap_time: completed.then_some(steps as f64 * cfg.dt),
    })
}
