use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sbs_core::catalog::{insurance_mdp, insurance_no_pay};
use sbs_core::verify::{solve_distorted, RewardTiming};
use sbs_core::*;

fn tk(r_max: f64) -> DistortionModel {
    tversky_kahneman_model(0.88, 0.88, 2.25, 0.61, 0.69, r_max).unwrap()
}

fn occupancy_and_value(c: &mut Criterion) {
    let mut group = c.benchmark_group("occupancy");
    for &n in &[4usize, 16, 64] {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let mdp = random_mdp(n, 4, 20, 0.95, 10.0, &mut rng);
        let pol = Policy::uniform(n, 4, 20);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| occupancy(black_box(&mdp), &pol, 0).unwrap()));
    }
    group.finish();
}

fn perception(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mdp = random_mdp(16, 4, 20, 0.95, 10.0, &mut rng);
    let pol = Policy::uniform(16, 4, 20);
    let model = tk(10.0);
    c.bench_function("build_hmdp/16x4", |b| b.iter(|| build_hmdp(black_box(&mdp), &pol, &model, 0).unwrap()));
    c.bench_function("solve_distorted/16x4", |b| b.iter(|| solve_distorted(black_box(&mdp), &model, RewardTiming::EveryStep)));
}

fn detection(c: &mut Criterion) {
    let model = flat_region_model(0.02, &tversky_kahneman_model(0.88, 0.5, 2.25, 0.61, 0.69, 1000.0).unwrap()).unwrap();
    let (mdp, pol) = (insurance_mdp(), insurance_no_pay());
    c.bench_function("detect/insurance", |b| b.iter(|| detect(black_box(&mdp), &pol, &model, 500.0, 0.01, 0).unwrap()));
    c.bench_function("compute_r_bs", |b| b.iter(|| compute_r_bs(black_box(&model), 100.0, 1000.0).unwrap()));
}

fn estimation(c: &mut Criterion) {
    let model = tk(10.0);
    let mut group = c.benchmark_group("estimate_hemdp");
    for &n in &[1_000usize, 10_000] {
        let samples: Vec<f64> = (0..n).map(|i| ((i * 7919) % 2001) as f64 / 100.0 - 10.0).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &samples, |b, s| {
            b.iter(|| estimate_hemdp(black_box(s), &model, 1.0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, occupancy_and_value, perception, detection, estimation);
criterion_main!(benches);
