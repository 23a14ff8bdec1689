use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use matprint_core::features::frame_features;
use matprint_core::fingerprint::{similarity_values, Values};
use matprint_core::imaging::RgbImage;
use matprint_core::model::{mlp_forward, MlpModel, MlpSpec};
use matprint_core::{retrieve, similarity_matrix, Fingerprint, MaterialRecord, SimilarityParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn values(rng: &mut impl Rng) -> Values {
    std::array::from_fn(|_| rng.random_range(-1.0..=1.0))
}

fn database(rng: &mut impl Rng, n: usize) -> Vec<MaterialRecord> {
    (0..n)
        .map(|i| MaterialRecord::new("other", Fingerprint::new(format!("m{i:03}"), values(rng)).unwrap()))
        .collect()
}

fn similarity(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (values(&mut rng), values(&mut rng));
    c.bench_function("similarity_pair", |bench| bench.iter(|| similarity_values(black_box(&a), black_box(&b), 0.5)));
}

fn retrieval(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let db = database(&mut rng, 347);
    let query = Fingerprint::new("q", values(&mut rng)).unwrap();
    let params = SimilarityParams::default();
    c.bench_function("retrieve_top5_of_347", |bench| {
        bench.iter(|| retrieve(black_box(&db), black_box(&query), 5, params).unwrap())
    });
    c.bench_function("similarity_matrix_347", |bench| {
        bench.iter(|| similarity_matrix(black_box(&db), params).unwrap())
    });
}

fn mlp(c: &mut Criterion) {
    let mut group = c.benchmark_group("mlp_forward");
    for spec in [MlpSpec::statistical(), MlpSpec::embedding()] {
        let model = MlpModel::init(&spec, 3);
        let x: Vec<f64> = (0..spec.input_dim()).map(|i| (i as f64 * 0.1).sin()).collect();
        group.bench_with_input(BenchmarkId::from_parameter(spec.input_dim()), &x, |bench, x| {
            bench.iter(|| mlp_forward(&model, black_box(x)).unwrap())
        });
    }
    group.finish();
}

fn features(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = RgbImage::from_fn(512, 512, |_, _| [rng.random(), rng.random(), rng.random()]);
    let mut group = c.benchmark_group("frame_features");
    group.sample_size(10);
    group.bench_function("512x512", |bench| bench.iter(|| frame_features(black_box(&img)).unwrap()));
    group.finish();
}

criterion_group!(benches, similarity, retrieval, mlp, features);
criterion_main!(benches);
