use crate::error::{line_of, Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::kinematics::Pose;

pub const LANE_WIDTH: f64 = 0.25;
pub const EXTENT: (f64, f64) = (2.8, 1.8);
const SAMPLES: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackKind {
    Ellipse,
    O,
    S,
    /// Loaded from a file; not produced by [`build_track`].
    Custom,
}

impl TrackKind {
    pub const BUILTIN: [TrackKind; 3] = [TrackKind::Ellipse, TrackKind::O, TrackKind::S];

    pub fn as_str(self) -> &'static str {
        match self {
            TrackKind::Ellipse => "ellipse",
            TrackKind::O => "o",
            TrackKind::S => "s",
            TrackKind::Custom => "custom",
        }
    }
}

impl fmt::Display for TrackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ellipse" => Ok(TrackKind::Ellipse),
            "o" => Ok(TrackKind::O),
            "s" => Ok(TrackKind::S),
            "custom" => Ok(TrackKind::Custom),
            _ => Err(Error::invalid(format!(
                "unknown track kind `{s}` (expected ellipse, o or s)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryColor {
    Yellow,
    Red,
    White,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryColors {
    pub center: BoundaryColor,
    pub outer: BoundaryColor,
    pub inner: BoundaryColor,
}

impl Default for BoundaryColors {
    fn default() -> Self {
        BoundaryColors {
            center: BoundaryColor::Yellow,
            outer: BoundaryColor::Red,
            inner: BoundaryColor::White,
        }
    }
}

/// Closest centerline point to a query position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nearest {
    /// Arc length of the closest point.
    pub s: f64,
    /// Signed distance, positive to the left of the travel direction.
    pub cte: f64,
    pub segment: usize,
}

/// Closed centerline sampled at roughly uniform arc length, with the first
/// point repeated at the end. Tracks are driven counterclockwise; the outer
/// boundary lies `lane_width` to the right of the centerline and the inner
/// boundary `lane_width` to the left.
#[derive(Clone, Debug)]
pub struct TrackSpec {
    pub kind: TrackKind,
    pub lane_width: f64,
    pub extent: (f64, f64),
    pub tiles: usize,
    pub colors: BoundaryColors,
    points: Vec<[f64; 2]>,
    arc: Vec<f64>,
    curvature: Vec<f64>,
    /// Arc range of the S-bend, if any.
    pub open_section: Option<(f64, f64)>,
    /// Arc ranges where inner and outer boundary colors trade sides.
    pub swapped: Vec<(f64, f64)>,
    grid: Grid,
}

impl TrackSpec {
    /// Build from a closed polyline. `points` must repeat the first point at
    /// the end; `curvature` (one per point) is estimated when absent.
    pub fn from_points(
        kind: TrackKind,
        points: Vec<[f64; 2]>,
        curvature: Option<Vec<f64>>,
        lane_width: f64,
        extent: (f64, f64),
    ) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::Validation("track needs at least 4 points".into()));
        }
        if !(lane_width > 0.0) {
            return Err(Error::Validation(format!(
                "lane_width must be positive, got {lane_width}"
            )));
        }
        let first = points[0];
        let last = *points.last().unwrap();
        if dist(first, last) > 1e-9 {
            return Err(Error::Validation(format!(
                "centerline is not closed: first {first:?}, last {last:?}"
            )));
        }
        let mut arc = Vec::with_capacity(points.len());
        arc.push(0.0);
        for w in points.windows(2) {
            let d = dist(w[0], w[1]);
            if d >= lane_width {
                return Err(Error::Validation(format!(
                    "adjacent samples {d} m apart (>= lane width)"
                )));
            }
            if d == 0.0 {
                return Err(Error::Validation("duplicate adjacent centerline samples".into()));
            }
            arc.push(arc.last().unwrap() + d);
        }
        for p in &points {
            if !(p[0] >= 0.0 && p[0] <= extent.0 && p[1] >= 0.0 && p[1] <= extent.1) {
                return Err(Error::Validation(format!("point {p:?} outside extent {extent:?}")));
            }
        }
        let curvature = match curvature {
            Some(c) if c.len() == points.len() => c,
            Some(c) => {
                return Err(Error::Validation(format!(
                    "{} curvature values for {} points",
                    c.len(),
                    points.len()
                )))
            }
            None => estimate_curvature(&points),
        };
        let grid = Grid::build(&points, extent, lane_width);
        Ok(TrackSpec {
            kind,
            lane_width,
            extent,
            tiles: 6,
            colors: BoundaryColors::default(),
            points,
            arc,
            curvature,
            open_section: None,
            swapped: Vec::new(),
            grid,
        })
    }

    /// Sample points including the closing duplicate.
    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// Cumulative arc length at each sample.
    pub fn arc(&self) -> &[f64] {
        &self.arc
    }

    /// Signed curvature at each sample (positive = turning left).
    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    pub fn length(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    pub fn segments(&self) -> usize {
        self.points.len() - 1
    }

    pub fn wrap_s(&self, s: f64) -> f64 {
        s.rem_euclid(self.length())
    }

    fn segment_at(&self, s: f64) -> (usize, f64) {
        let s = self.wrap_s(s);
        let i = match self.arc.binary_search_by(|a| a.total_cmp(&s)) {
            Ok(i) => i.min(self.segments() - 1),
            Err(i) => i - 1,
        };
        let len = self.arc[i + 1] - self.arc[i];
        (i, ((s - self.arc[i]) / len).clamp(0.0, 1.0))
    }

    /// Centerline point at arc length `s` (wrapped).
    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let (i, t) = self.segment_at(s);
        lerp(self.points[i], self.points[i + 1], t)
    }

    /// Travel direction of the segment containing `s`.
    pub fn heading_at(&self, s: f64) -> f64 {
        let (i, _) = self.segment_at(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        (b[1] - a[1]).atan2(b[0] - a[0])
    }

    /// Pose on the centerline at `s`, aligned with the direction of travel.
    pub fn pose_at(&self, s: f64) -> Pose {
        let p = self.point_at(s);
        Pose::new(p[0], p[1], self.heading_at(s))
    }

    /// Pose offset laterally from the centerline (positive = left).
    pub fn offset_pose(&self, s: f64, lateral: f64) -> Pose {
        let p = self.pose_at(s);
        let (sn, cs) = p.heading.sin_cos();
        Pose::new(p.x - lateral * sn, p.y + lateral * cs, p.heading)
    }

    pub fn is_swapped(&self, s: f64) -> bool {
        self.swapped.iter().any(|&(a, b)| s >= a && s <= b)
    }

    fn project(&self, i: usize, p: [f64; 2]) -> (f64, f64, f64) {
        let a = self.points[i];
        let b = self.points[i + 1];
        let ab = [b[0] - a[0], b[1] - a[1]];
        let ap = [p[0] - a[0], p[1] - a[1]];
        let len2 = ab[0] * ab[0] + ab[1] * ab[1];
        let t = ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0);
        let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
        let cross = ab[0] * ap[1] - ab[1] * ap[0];
        (d2, t, cross)
    }

    fn nearest_in(&self, p: [f64; 2], candidates: impl Iterator<Item = usize>) -> Option<Nearest> {
        let mut best: Option<(f64, usize, f64, f64)> = None;
        for i in candidates {
            let (d2, t, cross) = self.project(i, p);
            if best.is_none_or(|b| d2 < b.0) {
                best = Some((d2, i, t, cross));
            }
        }
        best.map(|(d2, i, t, cross)| {
            let d = d2.sqrt();
            Nearest {
                s: self.arc[i] + t * (self.arc[i + 1] - self.arc[i]),
                cte: if cross < 0.0 { -d } else { d },
                segment: i,
            }
        })
    }

    /// Exhaustive nearest-point search.
    pub fn nearest_brute(&self, x: f64, y: f64) -> Nearest {
        self.nearest_in([x, y], 0..self.segments()).expect("track has segments")
    }

    /// Walk along the polyline from segment `start` while the distance to `p`
    /// decreases.
    fn hill_climb(&self, p: [f64; 2], start: usize) -> Nearest {
        let n = self.segments();
        let mut i = start;
        let mut best = self.project(i, p);
        let mut dir = 0isize;
        loop {
            let mut moved = false;
            for step in [1isize, -1] {
                if dir != 0 && step != dir {
                    continue;
                }
                let j = (i as isize + step).rem_euclid(n as isize) as usize;
                let cand = self.project(j, p);
                if cand.0 < best.0 {
                    i = j;
                    best = cand;
                    dir = step;
                    moved = true;
                    break;
                }
            }
            if !moved {
                break;
            }
        }
        let (d2, t, cross) = best;
        let d = d2.sqrt();
        Nearest {
            s: self.arc[i] + t * (self.arc[i + 1] - self.arc[i]),
            cte: if cross < 0.0 { -d } else { d },
            segment: i,
        }
    }

    /// Nearest point for positions within the index band around the
    /// centerline; `None` when the position is farther than the band.
    pub fn nearest_within_band(&self, x: f64, y: f64) -> Option<Nearest> {
        let seed = self.grid.seed(x, y)?;
        let n = self.hill_climb([x, y], seed);
        (n.cte.abs() <= self.grid.radius).then_some(n)
    }

    pub fn nearest(&self, x: f64, y: f64) -> Nearest {
        self.nearest_within_band(x, y)
            .unwrap_or_else(|| self.nearest_brute(x, y))
    }

    /// Save as a TOML document with the full point list.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = TrackFile {
            kind: self.kind,
            lane_width: self.lane_width,
            extent: [self.extent.0, self.extent.1],
            tiles: self.tiles,
            colors: self.colors,
            open_section: self.open_section.map(|(a, b)| [a, b]),
            swapped: self.swapped.iter().map(|&(a, b)| [a, b]).collect(),
            points: self.points.clone(),
            curvature: Some(self.curvature.clone()),
        };
        let text = toml::to_string(&file).map_err(|e| Error::invalid(format!("track serialization: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: TrackFile = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|r| line_of(text, r.start)).unwrap_or(0);
            Error::Parse {
                path: "<track>".into(),
                line: line as u64,
                message: e.message().to_string(),
            }
        })?;
        let mut t = TrackSpec::from_points(
            file.kind,
            file.points,
            file.curvature,
            file.lane_width,
            (file.extent[0], file.extent[1]),
        )?;
        t.tiles = file.tiles;
        t.colors = file.colors;
        t.open_section = file.open_section.map(|[a, b]| (a, b));
        t.swapped = file.swapped.into_iter().map(|[a, b]| (a, b)).collect();
        Ok(t)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackFile {
    kind: TrackKind,
    #[serde(default = "default_lane")]
    lane_width: f64,
    #[serde(default = "default_extent")]
    extent: [f64; 2],
    #[serde(default = "default_tiles")]
    tiles: usize,
    #[serde(default)]
    colors: BoundaryColors,
    #[serde(default)]
    open_section: Option<[f64; 2]>,
    #[serde(default)]
    swapped: Vec<[f64; 2]>,
    points: Vec<[f64; 2]>,
    #[serde(default)]
    curvature: Option<Vec<f64>>,
}

fn default_lane() -> f64 {
    LANE_WIDTH
}

fn default_extent() -> [f64; 2] {
    [EXTENT.0, EXTENT.1]
}

fn default_tiles() -> usize {
    6
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn lerp(a: [f64; 2], b: [f64; 2], t: f64) -> [f64; 2] {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// Signed Menger curvature of each sample from its neighbours on the loop.
pub fn estimate_curvature(points: &[[f64; 2]]) -> Vec<f64> {
    let n = points.len() - 1;
    let mut out: Vec<f64> = (0..n)
        .map(|i| {
            let a = points[(i + n - 1) % n];
            let b = points[i];
            let c = points[(i + 1) % n];
            menger(a, b, c)
        })
        .collect();
    out.push(out[0]);
    out
}

pub fn menger(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    2.0 * cross / (dist(a, b) * dist(b, c) * dist(a, c))
}

/// Uniform grid over the extent (plus margin). Each cell near the centerline
/// stores the segment closest to its center, a starting point for a local
/// descent that is exact for queries within `radius` of the centerline.
#[derive(Clone, Debug)]
struct Grid {
    x0: f64,
    y0: f64,
    cell: f64,
    nx: usize,
    ny: usize,
    radius: f64,
    seeds: Vec<u32>,
}

impl Grid {
    const EMPTY: u32 = u32::MAX;

    fn build(points: &[[f64; 2]], extent: (f64, f64), lane_width: f64) -> Grid {
        let cell = 0.02;
        let radius = lane_width + 0.1;
        let margin = radius + cell;
        let (x0, y0) = (-margin, -margin);
        let nx = ((extent.0 + 2.0 * margin) / cell).ceil() as usize;
        let ny = ((extent.1 + 2.0 * margin) / cell).ceil() as usize;
        let mut seeds = vec![Self::EMPTY; nx * ny];
        let mut best = vec![f64::INFINITY; nx * ny];
        let reach = radius + cell * std::f64::consts::FRAC_1_SQRT_2;
        for (i, w) in points.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            let lo = [a[0].min(b[0]) - reach, a[1].min(b[1]) - reach];
            let hi = [a[0].max(b[0]) + reach, a[1].max(b[1]) + reach];
            let cx0 = (((lo[0] - x0) / cell).floor().max(0.0)) as usize;
            let cy0 = (((lo[1] - y0) / cell).floor().max(0.0)) as usize;
            let cx1 = (((hi[0] - x0) / cell).floor().max(0.0) as usize).min(nx - 1);
            let cy1 = (((hi[1] - y0) / cell).floor().max(0.0) as usize).min(ny - 1);
            for cy in cy0..=cy1 {
                for cx in cx0..=cx1 {
                    let c = [x0 + (cx as f64 + 0.5) * cell, y0 + (cy as f64 + 0.5) * cell];
                    let d = segment_distance(a, b, c);
                    let k = cy * nx + cx;
                    if d <= reach && d < best[k] {
                        best[k] = d;
                        seeds[k] = i as u32;
                    }
                }
            }
        }
        Grid {
            x0,
            y0,
            cell,
            nx,
            ny,
            radius,
            seeds,
        }
    }

    fn seed(&self, x: f64, y: f64) -> Option<usize> {
        let fx = (x - self.x0) / self.cell;
        let fy = (y - self.y0) / self.cell;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (cx, cy) = (fx as usize, fy as usize);
        if cx >= self.nx || cy >= self.ny {
            return None;
        }
        let s = self.seeds[cy * self.nx + cx];
        (s != Self::EMPTY).then_some(s as usize)
    }
}

fn segment_distance(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

/// Ellipse semi-axes and center used by [`build_track`].
pub const ELLIPSE: (f64, f64, f64, f64) = (1.15, 0.65, 1.4, 0.9);
/// Circle radius of the O map.
pub const O_RADIUS: f64 = 0.55;

/// Construct one of the built-in maps.
pub fn build_track(kind: TrackKind) -> Result<TrackSpec> {
    match kind {
        TrackKind::Ellipse => ellipse_track(),
        TrackKind::O => o_track(),
        TrackKind::S => s_track(),
        TrackKind::Custom => Err(Error::invalid("custom tracks are loaded from a file, not built")),
    }
}

fn ellipse_track() -> Result<TrackSpec> {
    let (a, b, cx, cy) = ELLIPSE;
    // Arc-length table over the parameter, then invert it at uniform spacing.
    let m = 1 << 16;
    let speed = |t: f64| (a * t.sin()).hypot(b * t.cos());
    let h = 2.0 * PI / m as f64;
    let mut table = Vec::with_capacity(m + 1);
    table.push(0.0);
    for k in 0..m {
        let t = k as f64 * h;
        let seg = h / 6.0 * (speed(t) + 4.0 * speed(t + 0.5 * h) + speed(t + h));
        table.push(table[k] + seg);
    }
    let total = table[m];
    let mut points = Vec::with_capacity(SAMPLES + 1);
    let mut curvature = Vec::with_capacity(SAMPLES + 1);
    let mut k = 0;
    for j in 0..SAMPLES {
        let s = total * j as f64 / SAMPLES as f64;
        while table[k + 1] < s {
            k += 1;
        }
        let t = (k as f64 + (s - table[k]) / (table[k + 1] - table[k])) * h;
        points.push([cx + a * t.cos(), cy + b * t.sin()]);
        curvature.push(a * b / (a * a * t.sin().powi(2) + b * b * t.cos().powi(2)).powf(1.5));
    }
    points.push(points[0]);
    curvature.push(curvature[0]);
    TrackSpec::from_points(TrackKind::Ellipse, points, Some(curvature), LANE_WIDTH, EXTENT)
}

fn o_track() -> Result<TrackSpec> {
    let (cx, cy) = (ELLIPSE.2, ELLIPSE.3);
    let mut points: Vec<[f64; 2]> = (0..SAMPLES)
        .map(|j| {
            let t = 2.0 * PI * j as f64 / SAMPLES as f64;
            [cx + O_RADIUS * t.cos(), cy + O_RADIUS * t.sin()]
        })
        .collect();
    points.push(points[0]);
    let curvature = vec![1.0 / O_RADIUS; SAMPLES + 1];
    TrackSpec::from_points(TrackKind::O, points, Some(curvature), LANE_WIDTH, EXTENT)
}

#[derive(Clone, Copy, Debug)]
enum Piece {
    Line(f64),
    /// Radius and signed turn angle (positive = left).
    Arc(f64, f64),
}

impl Piece {
    fn length(self) -> f64 {
        match self {
            Piece::Line(l) => l,
            Piece::Arc(r, a) => r * a.abs(),
        }
    }

    fn curvature(self) -> f64 {
        match self {
            Piece::Line(_) => 0.0,
            Piece::Arc(r, a) => a.signum() / r,
        }
    }

    /// Pose after travelling `u` along the piece from `(x, y, th)`.
    fn advance(self, (x, y, th): (f64, f64, f64), u: f64) -> (f64, f64, f64) {
        match self {
            Piece::Line(_) => (x + u * th.cos(), y + u * th.sin(), th),
            Piece::Arc(r, a) => {
                let k = a.signum() / r;
                let th1 = th + k * u;
                (x + (th1.sin() - th.sin()) / k, y - (th1.cos() - th.cos()) / k, th1)
            }
        }
    }
}

/// Kidney-shaped loop: bottom straight, left U-turn, an S-bend (left arc then
/// right arc), a short straight and a closing left U-turn.
fn s_track() -> Result<TrackSpec> {
    let y_bottom = 0.25;
    let r_right = 0.65;
    let r_bend = 0.7;
    let bend = 35f64.to_radians();
    let top = 0.2;
    let x0 = 0.85;

    let bend_dx = 2.0 * r_bend * bend.sin();
    let bend_dy = 2.0 * r_bend * (1.0 - bend.cos());
    let bottom = bend_dx + top;
    let y_after_bend = y_bottom + 2.0 * r_right - bend_dy;
    let r_left = (y_after_bend - y_bottom) / 2.0;

    let pieces = [
        Piece::Line(bottom),
        Piece::Arc(r_right, PI),
        Piece::Arc(r_bend, bend),
        Piece::Arc(r_bend, -bend),
        Piece::Line(top),
        Piece::Arc(r_left, PI),
    ];
    let starts: Vec<f64> = pieces
        .iter()
        .scan(0.0, |acc, p| {
            let s = *acc;
            *acc += p.length();
            Some(s)
        })
        .collect();
    let total: f64 = pieces.iter().map(|p| p.length()).sum();
    let mut origins = Vec::with_capacity(pieces.len());
    let mut pose = (x0, y_bottom, 0.0);
    for p in &pieces {
        origins.push(pose);
        pose = p.advance(pose, p.length());
    }

    let mut points = Vec::with_capacity(SAMPLES + 1);
    let mut curvature = Vec::with_capacity(SAMPLES + 1);
    for j in 0..SAMPLES {
        let s = total * j as f64 / SAMPLES as f64;
        let k = starts.iter().rposition(|&st| st <= s).unwrap();
        let (x, y, _) = pieces[k].advance(origins[k], s - starts[k]);
        points.push([x, y]);
        curvature.push(pieces[k].curvature());
    }
    points.push(points[0]);
    curvature.push(curvature[0]);
    let mut t = TrackSpec::from_points(TrackKind::S, points, Some(curvature), LANE_WIDTH, EXTENT)?;
    // Map analytic piece boundaries onto the cumulative chord length.
    let scale = t.length() / total;
    t.open_section = Some((starts[2] * scale, starts[4] * scale));
    t.swapped = vec![(starts[3] * scale, starts[4] * scale)];
    Ok(t)
}
