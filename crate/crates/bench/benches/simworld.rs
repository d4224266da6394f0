use criterion::{black_box, criterion_group, criterion_main, Criterion};
use deskbc::evalsuite::{closed_loop_eval, ClosedLoopConfig, ExpertPolicy};
use deskbc::simworld::{
    build_track, render_camera, render_lane_mask, CameraConfig, TrackKind, VehicleParams, VehicleState,
};

fn simworld(c: &mut Criterion) {
    let track = build_track(TrackKind::S).unwrap();
    let state = VehicleState::at(track.pose_at(3.0));
    c.bench_function("render_camera", |b| b.iter(|| render_camera(black_box(&state), &track)));
    c.bench_function("render_lane_mask", |b| {
        b.iter(|| render_lane_mask(black_box(&state), &track))
    });
    c.bench_function("nearest", |b| b.iter(|| track.nearest(black_box(0.3), black_box(-0.2))));

    let ellipse = build_track(TrackKind::Ellipse).unwrap();
    let cfg = ClosedLoopConfig::default();
    let mut g = c.benchmark_group("closed_loop");
    g.sample_size(10);
    g.bench_function("expert_lap_ellipse", |b| {
        b.iter(|| {
            closed_loop_eval(
                &mut ExpertPolicy::default(),
                &ellipse,
                &cfg,
                &CameraConfig::default(),
                &VehicleParams::default(),
            )
            .unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, simworld);
criterion_main!(benches);
