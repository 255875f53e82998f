use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gazegpt_bench::noise_frame;
use gazegpt_core::{multiscale_crop, plan_crop, CameraModel, CropSpec, PixelPoint};

fn crops(c: &mut Criterion) {
    let model = CameraModel::imx179();
    let frame = noise_frame(&model, 1);
    let spec = CropSpec::default();
    let center = PixelPoint::new(1800.0, 1100.0);
    c.bench_function("plan_crop", |b| b.iter(|| plan_crop(&model, black_box(&center), &spec).unwrap()));
    let mut g = c.benchmark_group("multiscale_crop");
    g.sample_size(20);
    g.bench_function("imx179_3x512", |b| {
        b.iter(|| multiscale_crop(&frame, black_box(&center), &model, &spec).unwrap())
    });
    let crop = multiscale_crop(&frame, &center, &model, &spec).unwrap();
    g.bench_function("png_base64_3x512", |b| {
        b.iter(|| crop.levels.iter().map(|l| l.base64_png().len()).sum::<usize>())
    });
    g.finish();
}

criterion_group!(benches, crops);
criterion_main!(benches);
