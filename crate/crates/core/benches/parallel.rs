use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use wplab_core::extension::extend_points;
use wplab_core::field::FrequencyField;
use wplab_core::surface::Surface;
use wplab_core::wavepackets::decompose;
use wplab_core::rng;

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

fn bench(c: &mut Criterion) {
    let f = FrequencyField::plane_waves(1, 2, 1.0 / 64.0, 0.9, 5, 10.0);
    let mut g = rng::stream(2, 0);
    let pts: Vec<Vec<f64>> = (0..512).map(|_| (0..3).map(|_| rng::uniform(&mut g, -8.0, 8.0)).collect()).collect();
    let all = rayon::current_num_threads();
    let mut group = c.benchmark_group("extend_points");
    for (label, k) in [("sequential", 1), ("parallel", all)] {
        let p = pool(k);
        group.bench_with_input(BenchmarkId::new(label, k), &k, |b, _| b.iter(|| p.install(|| extend_points(&f, &Surface::Paraboloid, &pts).unwrap())));
    }
    group.finish();
    let mut group = c.benchmark_group("decompose");
    group.sample_size(10);
    for (label, k) in [("sequential", 1), ("parallel", all)] {
        let p = pool(k);
        group.bench_with_input(BenchmarkId::new(label, k), &k, |b, _| b.iter(|| p.install(|| decompose(&f, &Surface::Paraboloid, 64.0, 0.05, &[0.0; 3]).unwrap())));
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
