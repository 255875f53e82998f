use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gazegpt_bench::marker_pairs;
use gazegpt_core::{pixel_angle, project_gaze, register_plane, CameraModel, FixationDepth, GazeSample, PixelPoint};

fn geometry(c: &mut Criterion) {
    let (px, plane) = marker_pairs();
    c.bench_function("register_plane", |b| b.iter(|| register_plane(black_box(&px), black_box(&plane), 1.0).unwrap()));

    let model = CameraModel::imx179().with_distortion(-0.08, 0.02).unwrap();
    let gaze = GazeSample::new(0.0, [0.03, -0.01, 0.0], [0.2, -0.1, 1.0]).unwrap();
    c.bench_function("project_gaze", |b| {
        b.iter(|| project_gaze(&model, black_box(&gaze), FixationDepth::Finite(1.0)).unwrap())
    });
    let (p, q) = (PixelPoint::new(100.0, 200.0), PixelPoint::new(3000.0, 2100.0));
    c.bench_function("pixel_angle_distorted", |b| b.iter(|| pixel_angle(&model, black_box(&p), black_box(&q))));
}

criterion_group!(benches, geometry);
criterion_main!(benches);
