use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use eiformer::compute::Tensor;
use eiformer::model::{Arch, ForecastModel, ModelConfig};
use eiformer::par;

fn input(n: usize) -> Tensor {
    Tensor::from_fn([8, 12, n, 1], |i| {
        ((i as f64) * 0.618_033_988_75).fract() - 0.5
    })
}

/// Forward pass on the default pool against the same pass pinned to one thread.
fn forward(c: &mut Criterion) {
    let threads = par::current_threads();
    let mut group = c.benchmark_group("eiformer_forward");
    group.sample_size(10);
    for n in [256, 1024, 2048] {
        let model = ForecastModel::new(ModelConfig {
            arch: Arch::EiFormer,
            embed_dim: 32,
            latent_count: 8,
            ..ModelConfig::default()
        })
        .expect("valid config");
        let x = input(n);
        group.bench_with_input(
            BenchmarkId::new(format!("parallel-{threads}"), n),
            &x,
            |b, x| b.iter(|| model.predict(x).expect("forward")),
        );
        group.bench_with_input(BenchmarkId::new("sequential", n), &x, |b, x| {
            par::with_threads(1, || b.iter(|| model.predict(x).expect("forward")))
        });
    }
    group.finish();
}

criterion_group!(benches, forward);
criterion_main!(benches);
