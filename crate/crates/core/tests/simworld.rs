use deskbc::simworld::camera::{palette, swap_boundary_colors};
use deskbc::simworld::track::menger;
use deskbc::simworld::*;
use proptest::prelude::*;
use std::f64::consts::PI;
use std::sync::LazyLock;

fn params() -> VehicleParams {
    VehicleParams::default()
}

/// Ellipse perimeter by midpoint integration of the speed over 2e6 steps.
fn ellipse_perimeter_oracle(a: f64, b: f64) -> f64 {
    let n = 2_000_000;
    let h = 2.0 * PI / n as f64;
    (0..n)
        .map(|k| {
            let t = (k as f64 + 0.5) * h;
            (a * t.sin()).hypot(b * t.cos()) * h
        })
        .sum()
}

fn stadium(straight: f64, radius: f64) -> TrackSpec {
    let (x0, y0) = (5.0, 2.0);
    let step = 0.01;
    let mut pts = Vec::new();
    let n_line = (straight / step) as usize;
    let n_arc = (PI * radius / step) as usize;
    for i in 0..n_line {
        pts.push([x0 + straight * i as f64 / n_line as f64, y0]);
    }
    for i in 0..n_arc {
        let t = -PI / 2.0 + PI * i as f64 / n_arc as f64;
        pts.push([x0 + straight + radius * t.cos(), y0 + radius + radius * t.sin()]);
    }
    for i in 0..n_line {
        pts.push([x0 + straight - straight * i as f64 / n_line as f64, y0 + 2.0 * radius]);
    }
    for i in 0..n_arc {
        let t = PI / 2.0 + PI * i as f64 / n_arc as f64;
        pts.push([x0 + radius * t.cos(), y0 + radius + radius * t.sin()]);
    }
    pts.push(pts[0]);
    TrackSpec::from_points(TrackKind::Custom, pts, None, LANE_WIDTH, (50.0, 20.0)).unwrap()
}

static ELLIPSE: LazyLock<TrackSpec> = LazyLock::new(|| build_track(TrackKind::Ellipse).unwrap());
static STADIUM: LazyLock<TrackSpec> = LazyLock::new(|| stadium(30.0, 3.0));

#[test]
fn every_builtin_track_satisfies_invariants() {
    for kind in TrackKind::BUILTIN {
        let t = build_track(kind).unwrap();
        let p = t.points();
        assert!(p.len() >= 257);
        let (f, l) = (p[0], p[p.len() - 1]);
        assert!((f[0] - l[0]).hypot(f[1] - l[1]) <= 1e-9);
        for w in p.windows(2) {
            assert!((w[0][0] - w[1][0]).hypot(w[0][1] - w[1][1]) < t.lane_width);
        }
        for q in p {
            assert!(
                q[0] >= 0.0 && q[0] <= 2.8 && q[1] >= 0.0 && q[1] <= 1.8,
                "{kind}: {q:?}"
            );
        }
        assert_eq!(t.lane_width, 0.25);
        assert_eq!(t.extent, (2.8, 1.8));
        assert_eq!(t.tiles, 6);
    }
}

#[test]
fn ellipse_length_matches_integrated_perimeter() {
    let t = build_track(TrackKind::Ellipse).unwrap();
    let oracle = ellipse_perimeter_oracle(1.15, 0.65);
    assert!(
        (t.length() - oracle).abs() / oracle < 1e-5,
        "{} vs {oracle}",
        t.length()
    );
}

#[test]
fn o_track_has_constant_curvature() {
    let t = build_track(TrackKind::O).unwrap();
    let r = deskbc::simworld::track::O_RADIUS;
    for k in t.curvature() {
        assert!((k - 1.0 / r).abs() < 1e-6);
    }
    // the sampled points agree with the stored value as well
    let p = t.points();
    for i in 1..p.len() - 1 {
        assert!((menger(p[i - 1], p[i], p[i + 1]) - 1.0 / r).abs() < 1e-6);
    }
}

#[test]
fn s_track_curvature_changes_sign_once_in_open_section() {
    let t = build_track(TrackKind::S).unwrap();
    let (a, b) = t.open_section.unwrap();
    let p = t.points();
    let arc = t.arc();
    let signs: Vec<f64> = (1..p.len() - 1)
        .filter(|&i| arc[i] > a && arc[i] < b)
        .map(|i| menger(p[i - 1], p[i], p[i + 1]))
        .filter(|k| k.abs() > 1e-3)
        .map(f64::signum)
        .collect();
    assert!(signs.len() > 50);
    let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
    assert_eq!(changes, 1);
    assert_eq!(signs[0], 1.0);
    // colors swap on the second arc of the bend only
    assert_eq!(t.swapped.len(), 1);
    assert!(t.swapped[0].0 > a && (t.swapped[0].1 - b).abs() < 1e-9);
}

#[test]
fn step_straight_line() {
    let s = VehicleState::at(Pose::new(0.0, 0.0, 0.0));
    let n = step_kinematics(&s, 0.0, 0.3, 0.02, &params()).unwrap();
    assert!((n.pose.x - 0.006).abs() < 1e-15);
    assert_eq!(n.pose.y, 0.0);
    assert_eq!(n.pose.heading, 0.0);
}

#[test]
fn oversized_steering_saturates() {
    let s = VehicleState::at(Pose::new(0.3, -0.2, 1.0));
    let a = step_kinematics(&s, 0.7, 0.5, 0.02, &params()).unwrap();
    let b = step_kinematics(&s, 0.5, 0.5, 0.02, &params()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.steering, 0.5);
}

#[test]
fn constant_steering_returns_to_start_after_one_turn() {
    let l = params().wheelbase;
    let circumference = 2.0 * PI * l / 0.3f64.tan();
    let dt = 1e-4;
    let v = 0.5;
    let steps = (circumference / (v * dt)).round() as usize;
    let mut s = VehicleState::at(Pose::new(1.0, 1.0, 0.0));
    for _ in 0..steps {
        s = step_kinematics(&s, 0.3, v, dt, &params()).unwrap();
    }
    let gap = (s.pose.x - 1.0).hypot(s.pose.y - 1.0);
    assert!(gap < 1e-3, "gap {gap}");
    assert!(wrap_angle(s.pose.heading).abs() < 1e-3);
}

#[test]
fn kinematics_local_error_is_second_order() {
    let start = VehicleState::at(Pose::new(0.0, 0.0, 0.4));
    let run = |dt: f64, span: f64| {
        let mut s = start;
        let n = (span / dt).round() as usize;
        for _ in 0..n {
            s = step_kinematics(&s, 0.35, 0.8, dt, &params()).unwrap();
        }
        s
    };
    let gap = |dt: f64| {
        let coarse = run(dt, dt);
        let reference = run(1e-5, dt);
        (coarse.pose.x - reference.pose.x).hypot(coarse.pose.y - reference.pose.y)
    };
    let (e1, e2) = (gap(0.04), gap(0.02));
    let ratio = e1 / e2;
    assert!((ratio - 4.0).abs() <= 0.8, "ratio {ratio}");
}

#[test]
fn cross_track_error_on_straight() {
    let t = build_track(TrackKind::S).unwrap();
    // middle of the bottom straight, heading +x
    let on = VehicleState::at(Pose::new(1.3, 0.25, 0.0));
    assert!(cross_track_error(&on, &t).abs() < 1e-9);
    let left = VehicleState::at(Pose::new(1.3, 0.35, 0.0));
    assert!((cross_track_error(&left, &t) - 0.1).abs() < 1e-9);
    let right = VehicleState::at(Pose::new(1.3, 0.15, 0.0));
    assert!((cross_track_error(&right, &t) + 0.1).abs() < 1e-9);
}

/// Signed distance by dense sampling of the track polyline.
fn dense_cte(t: &TrackSpec, x: f64, y: f64) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    let len = t.length();
    let n = 200_000;
    for k in 0..n {
        let s = len * k as f64 / n as f64;
        let p = t.point_at(s);
        let d = (p[0] - x).hypot(p[1] - y);
        if d < best.0 {
            let h = t.heading_at(s);
            let side = h.cos() * (y - p[1]) - h.sin() * (x - p[0]);
            best = (d, side.signum() * d);
        }
    }
    best.1
}

#[test]
fn cross_track_error_matches_dense_search() {
    for kind in TrackKind::BUILTIN {
        let t = build_track(kind).unwrap();
        for i in 0..10 {
            let s = t.length() * (i as f64 * 0.37).fract();
            let off = -0.2 + 0.04 * i as f64;
            let p = t.offset_pose(s, off);
            let got = cross_track_error(&VehicleState::at(p), &t);
            let want = dense_cte(&t, p.x, p.y);
            assert!((got - want).abs() < 1e-4, "{kind} s={s} off={off}: {got} vs {want}");
        }
    }
}

#[test]
fn renders_are_deterministic() {
    let t = build_track(TrackKind::S).unwrap();
    let s = VehicleState::at(t.pose_at(1.7));
    assert_eq!(render_camera(&s, &t), render_camera(&s, &t));
    assert_eq!(render_lane_mask(&s, &t), render_lane_mask(&s, &t));
}

fn max_abs_diff(a: &deskbc::image::ImageU8, b: &deskbc::image::ImageU8) -> u8 {
    a.data.iter().zip(&b.data).map(|(x, y)| x.abs_diff(*y)).max().unwrap()
}

#[test]
fn centered_view_of_straight_is_mirror_symmetric() {
    let t = stadium(30.0, 3.0);
    let s = VehicleState::at(Pose::new(15.0, 2.0, 0.0));
    let img = render_camera(&s, &t);
    let mirrored = swap_boundary_colors(&img.mirrored());
    assert!(max_abs_diff(&img, &mirrored) <= 1);
    // both boundary colors and the center line are visible
    for c in [palette::RED, palette::WHITE, palette::YELLOW] {
        assert!(img.data.chunks(3).any(|p| p == c));
    }
}

#[test]
fn opposite_offsets_render_as_mirror_images() {
    let t = stadium(30.0, 3.0);
    let a = render_camera(&VehicleState::at(Pose::new(15.0, 2.1, 0.0)), &t);
    let b = render_camera(&VehicleState::at(Pose::new(15.0, 1.9, 0.0)), &t);
    assert!(max_abs_diff(&a, &swap_boundary_colors(&b.mirrored())) <= 1);
    assert_ne!(a, b);
}

#[test]
fn mask_is_subset_of_boundary_pixels() {
    for kind in TrackKind::BUILTIN {
        let t = build_track(kind).unwrap();
        for i in 0..6 {
            let pose = t.offset_pose(t.length() * i as f64 / 6.0, 0.05 * (i as f64 - 3.0));
            let s = VehicleState::at(pose);
            let img = render_camera(&s, &t);
            let mask = render_lane_mask(&s, &t);
            let mut on = 0;
            for (m, px) in mask.data.iter().zip(img.data.chunks(3)) {
                let boundary = px == palette::RED || px == palette::WHITE || px == palette::YELLOW;
                if *m > 0 {
                    on += 1;
                    assert!(boundary);
                    assert_eq!(*m, 255);
                }
                if boundary {
                    assert_eq!(*m, 255);
                }
            }
            assert!(on > 100, "{kind}: only {on} mask pixels");
        }
    }
}

#[test]
fn mask_is_empty_when_facing_away() {
    let t = build_track(TrackKind::O).unwrap();
    let s = VehicleState::at(Pose::new(0.05, 0.05, -3.0 * PI / 4.0));
    assert!(render_lane_mask(&s, &t).data.iter().all(|v| *v == 0));
}

#[test]
fn softened_mask_keeps_lines_and_range() {
    let t = build_track(TrackKind::Ellipse).unwrap();
    let s = VehicleState::at(t.pose_at(0.0));
    let m = render_lane_mask(&s, &t);
    let soft = soften_mask(&m);
    for (a, b) in m.data.iter().zip(&soft.data) {
        assert!(b >= a);
    }
    assert!(soft.data.iter().filter(|v| **v > 0).count() > m.data.iter().filter(|v| **v > 0).count());
}

#[test]
fn track_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for kind in TrackKind::BUILTIN {
        let t = build_track(kind).unwrap();
        let path = dir.path().join(format!("{kind}.toml"));
        t.save(&path).unwrap();
        let back = TrackSpec::load(&path).unwrap();
        assert_eq!(back.kind, kind);
        assert_eq!(back.points(), t.points());
        assert_eq!(back.curvature(), t.curvature());
        assert_eq!(back.arc(), t.arc());
        assert_eq!(back.swapped, t.swapped);
        assert_eq!(back.open_section, t.open_section);
    }
}

#[test]
fn track_file_errors_name_the_line() {
    let err = TrackSpec::parse("kind = \"ellipse\"\nbogus = 1\npoints = []\n").unwrap_err();
    match err {
        deskbc::Error::Parse { line, .. } => assert_eq!(line, 2),
        e => panic!("unexpected {e}"),
    }
    let open = "kind = \"custom\"\npoints = [[0.5,0.5],[0.6,0.5],[0.6,0.6],[0.5,0.61]]\n";
    assert!(matches!(TrackSpec::parse(open), Err(deskbc::Error::Validation(_))));
}

proptest! {
    #[test]
    fn step_preserves_state_bounds(
        x in -5.0..5.0f64, y in -5.0..5.0f64, h in -10.0..10.0f64,
        steer in -3.0..3.0f64, throttle in 0.0..=1.0f64, dt in 1e-4..0.5f64,
    ) {
        let s = VehicleState::at(Pose::new(x, y, h));
        let n = step_kinematics(&s, steer, throttle, dt, &params()).unwrap();
        prop_assert!(n.speed >= 0.0);
        prop_assert!(n.steering.abs() <= 0.5);
        prop_assert!(n.pose.heading > -PI && n.pose.heading <= PI);
    }

    #[test]
    fn mirrored_offset_negates_cte(s in 0.0..1.0f64, off in 0.01..0.2f64) {
        let t = &*STADIUM;
        let s = 1.0 + 28.0 * s;
        let a = cross_track_error(&VehicleState::at(t.offset_pose(s, off)), t);
        let b = cross_track_error(&VehicleState::at(t.offset_pose(s, -off)), t);
        prop_assert!((a + b).abs() < 1e-9);
        prop_assert!((a - off).abs() < 1e-9);
    }

    #[test]
    fn mask_values_in_range(s in 0.0..1.0f64, off in -0.2..0.2f64, dh in -0.5..0.5f64) {
        let t = &*ELLIPSE;
        let mut p = t.offset_pose(s * t.length(), off);
        p = Pose::new(p.x, p.y, p.heading + dh);
        let m = render_lane_mask(&VehicleState::at(p), t);
        prop_assert!(m.data.iter().all(|v| *v == 0 || *v == 255));
        prop_assert_eq!(m.data.len(), 224 * 224);
    }
}
