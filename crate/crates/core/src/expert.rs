//! Scripted pure-pursuit driver and demonstration recorder.

use crate::datasetio::{
    frame_name, quantize, timestamp, write_dataset, DatasetManifest, DatasetMeta, FrameRecord, MASK_DIR,
};
use crate::error::{Error, Result};
use crate::seed;
use crate::simworld::{clamp_steer, step_kinematics, Camera, CameraConfig, TrackSpec, VehicleParams, VehicleState};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertConfig {
    pub lookahead: f64,
    pub throttle: f64,
    pub steer_noise_std: f64,
    pub dt: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            lookahead: 0.3,
            throttle: 0.3,
            steer_noise_std: 0.02,
            dt: 0.02,
        }
    }
}

/// Pure-pursuit steering toward the centerline point `lookahead` meters of arc
/// ahead of the closest point, clamped to the actuator range.
pub fn pure_pursuit_steer(state: &VehicleState, track: &TrackSpec, lookahead: f64, wheelbase: f64) -> Result<f64> {
    if !(lookahead > 0.0) {
        return Err(Error::invalid(format!("lookahead must be positive, got {lookahead}")));
    }
    let p = state.pose;
    let near = track.nearest(p.x, p.y);
    let target = track.point_at(near.s + lookahead);
    let alpha = (target[1] - p.y).atan2(target[0] - p.x) - p.heading;
    Ok(clamp_steer((2.0 * wheelbase * alpha.sin()).atan2(lookahead)))
}

/// Everything besides the dataset arguments that shapes a recording.
#[derive(Clone, Debug, Default)]
pub struct RecordOptions {
    pub camera: CameraConfig,
    pub vehicle: VehicleParams,
    pub lookahead: Option<f64>,
    pub dt: Option<f64>,
    /// Also write `masks/Frame_*.png` lane masks.
    pub masks: bool,
}

/// Expert rollout without rendering: the state seen at each frame and its
/// noise-free label.
pub fn expert_trajectory(
    track: &TrackSpec,
    n_frames: usize,
    throttle: f64,
    steer_noise_std: f64,
    seed: u64,
    opts: &RecordOptions,
) -> Result<Vec<(VehicleState, f64)>> {
    if n_frames == 0 {
        return Err(Error::invalid("n_frames must be positive"));
    }
    if !(throttle > 0.0 && throttle <= 1.0) {
        return Err(Error::invalid(format!("throttle must be in (0, 1], got {throttle}")));
    }
    if !(steer_noise_std >= 0.0 && steer_noise_std.is_finite()) {
        return Err(Error::invalid(format!(
            "steer_noise_std must be >= 0, got {steer_noise_std}"
        )));
    }
    let defaults = ExpertConfig::default();
    let lookahead = opts.lookahead.unwrap_or(defaults.lookahead);
    let dt = opts.dt.unwrap_or(defaults.dt);
    let noise = Normal::new(0.0, steer_noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut start_rng = seed::rng_for(seed, "expert/start");
    let mut noise_rng = seed::rng_for(seed, "expert/noise");
    let mut state = VehicleState::at(track.pose_at(start_rng.random_range(0.0..track.length())));

    let mut out = Vec::with_capacity(n_frames);
    for i in 1..=n_frames {
        let cte = track.nearest(state.pose.x, state.pose.y).cte;
        if cte.abs() >= track.lane_width {
            return Err(Error::Generation {
                frame: i,
                message: format!("vehicle left the track (cross-track error {cte:.3} m)"),
            });
        }
        let label = pure_pursuit_steer(&state, track, lookahead, opts.vehicle.wheelbase)?;
        out.push((state, label));
        let executed = if steer_noise_std > 0.0 {
            clamp_steer(label + noise.sample(&mut noise_rng))
        } else {
            label
        };
        state = step_kinematics(&state, executed, throttle, dt, &opts.vehicle)?;
    }
    Ok(out)
}

/// Drive `n_frames` steps with the expert from a seeded random centerline
/// pose, saving each camera frame with the noise-free expert label while the
/// executed command carries Gaussian exploration noise.
pub fn drive_and_record(
    track: &TrackSpec,
    n_frames: usize,
    throttle: f64,
    steer_noise_std: f64,
    seed: u64,
    out_dir: &Path,
    opts: &RecordOptions,
) -> Result<DatasetManifest> {
    let trajectory = expert_trajectory(track, n_frames, throttle, steer_noise_std, seed, opts)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    if opts.masks {
        let m = out_dir.join(MASK_DIR);
        std::fs::create_dir_all(&m).map_err(|e| Error::io(&m, e))?;
    }
    let camera = Camera::new(opts.camera);
    let mut records = Vec::with_capacity(n_frames);
    for (i, (state, label)) in trajectory.iter().enumerate() {
        let name = frame_name(i + 1);
        camera.render(state, track).save_png(&out_dir.join(&name))?;
        if opts.masks {
            camera
                .render_mask(state, track)
                .save_png(&out_dir.join(MASK_DIR).join(&name))?;
        }
        records.push(FrameRecord {
            frame_id: name,
            throttle: quantize(throttle),
            steering: quantize(*label),
        });
    }
    let manifest = DatasetManifest {
        root_dir: out_dir.to_path_buf(),
        records,
        meta: DatasetMeta {
            track_kind: track.kind,
            seed,
            created_at: timestamp(),
        },
    };
    write_dataset(&manifest)?;
    Ok(manifest)
}
