use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mrl_core::index::{search, IndexShard};
use mrl_core::ModelConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn bench_search(c: &mut Criterion) {
    let dims = ModelConfig::default().dims;
    let d_max = dims.max();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let docs: Vec<(u64, Vec<f64>)> = (0..5000).map(|i| (i, unit(&mut rng, d_max))).collect();
    let shard = IndexShard::build(docs, &dims, 0).expect("build").shard;
    let query = unit(&mut rng, d_max);
    let mut group = c.benchmark_group("search_top10");
    for dim in dims.iter() {
        group.bench_with_input(BenchmarkId::from_parameter(dim), &dim, |b, &dim| {
            b.iter(|| search(&shard, &query, dim, 10).expect("search"))
        });
    }
    group.finish();

    c.bench_function("build_5000", |b| {
        let docs: Vec<(u64, Vec<f64>)> = (0..5000).map(|i| (i, unit(&mut rng, d_max))).collect();
        b.iter(|| IndexShard::build(docs.clone(), &dims, 0).expect("build"))
    });
}

criterion_group!(benches, bench_search);
criterion_main!(benches);
