use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use potq_core::pot::{naive_group_scale, search_group_scale};
use potq_core::synth::{weights, WeightDist};
use potq_core::QuantConfig;

fn scale_search(c: &mut Criterion) {
    let mut group = c.benchmark_group("scale_search");
    for g in [32, 128] {
        let w = weights(1, g, WeightDist::Gaussian, 0.02, 1)
            .into_raw_vec_and_offset()
            .0;
        let cfg = QuantConfig::new(3, g).unwrap();
        group.throughput(Throughput::Elements(g as u64));
        group.bench_with_input(BenchmarkId::new("grid", g), &w, |b, w| {
            b.iter(|| search_group_scale(w, &cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("naive", g), &w, |b, w| {
            b.iter(|| naive_group_scale(w, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, scale_search);
criterion_main!(benches);
