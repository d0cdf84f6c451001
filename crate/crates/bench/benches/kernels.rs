use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use inert_drift_core::generator::{BumpPolynomial, Generator};
use inert_drift_core::sde::euler_step;
use inert_drift_core::stable_levy::{sample_path, StableSampler};
use inert_drift_core::stationary::{ks_normal_s, SampleSet};
use inert_drift_core::{
    Alpha, CircleFunction, CylinderFunction, PotentialSpec, QuadratureConfig, SeedRecord, StateYS,
};

fn stable(c: &mut Criterion) {
    let alpha = Alpha::new(1.3).unwrap();
    let sampler = StableSampler::new(alpha, 1e-3).unwrap();
    let mut rng = SeedRecord::new(1, "bench").rng();
    c.bench_function("stable_increment", |b| b.iter(|| sampler.sample(&mut rng)));
    let seed = SeedRecord::new(1, "bench/path");
    c.bench_function("stable_path_10k", |b| {
        b.iter(|| sample_path(alpha, 10_000, 1e-3, black_box(&seed)).unwrap())
    });
}

fn euler(c: &mut Criterion) {
    let spec = PotentialSpec::cosine();
    c.bench_function("euler_step", |b| {
        b.iter(|| euler_step(black_box(StateYS::new(0.3, 0.2)), 1e-2, 1e-3, &spec))
    });
}

fn generator(c: &mut Criterion) {
    let alpha = Alpha::new(1.0).unwrap();
    let gen = Generator::new(alpha, PotentialSpec::cosine(), QuadratureConfig::default()).unwrap();
    let g = CircleFunction::cos_harmonic(3);
    c.bench_function("circle_l_point", |b| b.iter(|| gen.circle_l(&g, black_box(0.7))));
    let f = CylinderFunction::separable(g, BumpPolynomial::new(vec![1.0, 0.5], 2.0));
    c.bench_function("full_generator_point", |b| {
        b.iter(|| gen.full(&f, black_box(0.7), black_box(0.2)))
    });
    let mut group = c.benchmark_group("slow");
    group.sample_size(10);
    group.bench_function("stationarity_residual", |b| {
        b.iter(|| gen.stationarity_residual(&f).unwrap())
    });
    group.finish();
}

fn ks(c: &mut Criterion) {
    let n = 10_000;
    let s: Vec<f64> = (0..n).map(|i| ((i as f64 + 0.5) / n as f64 - 0.5) * 6.0).collect();
    let set = SampleSet {
        theta: vec![0.0; n],
        s,
        burn_in: 0.0,
        thinning: 1.0,
        dt: 1e-3,
        alpha: Alpha::new(1.0).unwrap(),
        start: StateYS::new(0.0, 0.0),
        potential: PotentialSpec::cosine(),
        seeds: Vec::new(),
    };
    c.bench_function("ks_normal_10k", |b| b.iter(|| ks_normal_s(black_box(&set))));
}

criterion_group!(benches, stable, euler, generator, ks);
criterion_main!(benches);
