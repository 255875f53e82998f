use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gazegpt_bench::random_matrix;
use gazegpt_core::evalstats::stats::{friedman, rm_anova_gg, wilcoxon_signed_rank};

fn stats(c: &mut Criterion) {
    let m = random_matrix(12, 4, 1);
    c.bench_function("rm_anova_gg_12x4", |b| b.iter(|| rm_anova_gg(black_box(&m)).unwrap()));
    c.bench_function("friedman_12x4", |b| b.iter(|| friedman(black_box(&m)).unwrap()));

    let mut g = c.benchmark_group("wilcoxon");
    for n in [12, 25, 60] {
        let d = random_matrix(n, 2, n as u64);
        let (a, b): (Vec<f64>, Vec<f64>) = d.iter().map(|r| (r[0], r[1])).unzip();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| wilcoxon_signed_rank(black_box(&a), black_box(&b)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, stats);
criterion_main!(benches);
