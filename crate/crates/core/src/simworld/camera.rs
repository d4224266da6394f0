use super::kinematics::VehicleState;
use super::track::TrackSpec;
use crate::image::{ImageU8, IMAGE_SIZE};
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    /// Lens height above the ground, meters.
    pub height: f64,
    /// Pitch in degrees; negative looks down.
    pub pitch_deg: f64,
    pub hfov_deg: f64,
    /// Ground beyond this distance is drawn as background.
    pub draw_distance: f64,
    /// Camera position ahead of the pose reference point, meters.
    pub forward_offset: f64,
    /// Painted line width, meters.
    pub line_width: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            height: 0.19,
            pitch_deg: -15.0,
            hfov_deg: 120.0,
            draw_distance: 3.0,
            forward_offset: 0.0,
            line_width: 0.04,
        }
    }
}

pub mod palette {
    pub const YELLOW: [u8; 3] = [230, 200, 40];
    pub const RED: [u8; 3] = [205, 40, 40];
    pub const WHITE: [u8; 3] = [240, 240, 240];
    pub const ROAD: [u8; 3] = [45, 45, 50];
    pub const OFFROAD: [u8; 3] = [95, 90, 80];
    pub const SKY: [u8; 3] = [160, 185, 210];
}

use super::track::BoundaryColor;

fn rgb(c: BoundaryColor) -> [u8; 3] {
    match c {
        BoundaryColor::Yellow => palette::YELLOW,
        BoundaryColor::Red => palette::RED,
        BoundaryColor::White => palette::WHITE,
    }
}

/// What a pixel shows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Surface {
    Sky,
    Offroad,
    Road,
    Line(BoundaryColor),
}

/// Pinhole camera with per-pixel ground intersections precomputed in the
/// vehicle frame (x forward, y left).
#[derive(Clone, Debug)]
pub struct Camera {
    pub config: CameraConfig,
    ground: Vec<Option<[f64; 2]>>,
}

impl Camera {
    pub fn new(config: CameraConfig) -> Self {
        let n = IMAGE_SIZE;
        let f = (n as f64 / 2.0) / (config.hfov_deg.to_radians() / 2.0).tan();
        let phi = -config.pitch_deg.to_radians();
        let (sp, cp) = phi.sin_cos();
        let mut ground = Vec::with_capacity(n * n);
        for v in 0..n {
            let yc = (v as f64 + 0.5 - n as f64 / 2.0) / f;
            for u in 0..n {
                let xc = (u as f64 + 0.5 - n as f64 / 2.0) / f;
                let down = sp + yc * cp;
                if down <= 0.0 {
                    ground.push(None);
                    continue;
                }
                let t = config.height / down;
                let fwd = t * (cp - yc * sp);
                let left = -t * xc;
                let g = (fwd.hypot(left) <= config.draw_distance).then_some([fwd + config.forward_offset, left]);
                ground.push(g);
            }
        }
        Camera { config, ground }
    }

    fn surfaces<'a>(&'a self, state: &VehicleState, track: &'a TrackSpec) -> impl Iterator<Item = Surface> + 'a {
        let p = state.pose;
        let (sn, cs) = p.heading.sin_cos();
        let hw = self.config.line_width / 2.0;
        let lw = track.lane_width;
        let colors = track.colors;
        self.ground.iter().map(move |g| {
            let Some([gx, gy]) = *g else {
                return Surface::Sky;
            };
            let wx = p.x + gx * cs - gy * sn;
            let wy = p.y + gx * sn + gy * cs;
            let Some(near) = track.nearest_within_band(wx, wy) else {
                return Surface::Offroad;
            };
            let d = near.cte;
            if d.abs() < hw {
                return Surface::Line(colors.center);
            }
            let (left, right) = if track.is_swapped(near.s) {
                (colors.outer, colors.inner)
            } else {
                (colors.inner, colors.outer)
            };
            if (d - lw).abs() < hw {
                Surface::Line(left)
            } else if (d + lw).abs() < hw {
                Surface::Line(right)
            } else if d.abs() < lw {
                Surface::Road
            } else {
                Surface::Offroad
            }
        })
    }

    /// RGB front-camera frame.
    pub fn render(&self, state: &VehicleState, track: &TrackSpec) -> ImageU8 {
        let mut img = ImageU8::new(IMAGE_SIZE, IMAGE_SIZE, 3);
        for (px, s) in img.data.chunks_mut(3).zip(self.surfaces(state, track)) {
            px.copy_from_slice(&match s {
                Surface::Sky => palette::SKY,
                Surface::Offroad => palette::OFFROAD,
                Surface::Road => palette::ROAD,
                Surface::Line(c) => rgb(c),
            });
        }
        img
    }

    /// Binary boundary-line mask (255 on any painted line, 0 elsewhere).
    pub fn render_mask(&self, state: &VehicleState, track: &TrackSpec) -> ImageU8 {
        let mut img = ImageU8::new(IMAGE_SIZE, IMAGE_SIZE, 1);
        for (px, s) in img.data.iter_mut().zip(self.surfaces(state, track)) {
            *px = if matches!(s, Surface::Line(_)) { 255 } else { 0 };
        }
        img
    }
}

fn default_camera() -> &'static Camera {
    static CAM: OnceLock<Camera> = OnceLock::new();
    CAM.get_or_init(|| Camera::new(CameraConfig::default()))
}

/// Render with the default camera.
pub fn render_camera(state: &VehicleState, track: &TrackSpec) -> ImageU8 {
    default_camera().render(state, track)
}

/// Lane-boundary mask with the default camera.
pub fn render_lane_mask(state: &VehicleState, track: &TrackSpec) -> ImageU8 {
    default_camera().render_mask(state, track)
}

/// 3x3 box blur combined with the original by `max`, so line pixels stay at
/// full value while their neighbours get partial credit.
pub fn soften_mask(mask: &ImageU8) -> ImageU8 {
    let (w, h) = (mask.width, mask.height);
    let mut out = mask.clone();
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0u32;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                    let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    sum += mask.data[yy * w + xx] as u32;
                }
            }
            let blurred = ((sum as f64) / 9.0).round() as u8;
            out.data[y * w + x] = mask.data[y * w + x].max(blurred);
        }
    }
    out
}

/// Swap the red and white palette entries (used to compare mirrored views).
pub fn swap_boundary_colors(img: &ImageU8) -> ImageU8 {
    let mut out = img.clone();
    for px in out.data.chunks_mut(3) {
        if px == palette::RED {
            px.copy_from_slice(&palette::WHITE);
        } else if px == palette::WHITE {
            px.copy_from_slice(&palette::RED);
        }
    }
    out
}
