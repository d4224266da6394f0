//! Track geometry, vehicle kinematics and synthetic camera.

pub mod camera;
pub mod kinematics;
pub mod track;

pub use camera::{render_camera, render_lane_mask, soften_mask, Camera, CameraConfig};
pub use kinematics::{clamp_steer, step_kinematics, wrap_angle, Pose, VehicleParams, VehicleState, MAX_STEER};
pub use track::{build_track, BoundaryColor, Nearest, TrackKind, TrackSpec, LANE_WIDTH};

/// Signed distance from the vehicle to the centerline (positive = left).
pub fn cross_track_error(state: &VehicleState, track: &TrackSpec) -> f64 {
    track.nearest(state.pose.x, state.pose.y).cte
}
