use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use esnssm::identify::{kalman_smoother, IdData, NoiseModel, Prior};
use esnssm::linalg::expm;
use esnssm::rng::seeded;
use esnssm::{certify_weighted, simulate, Activation, DMatrix, DVector, LtiModel, ReservoirParams};
use rand::Rng;

fn gaussian(rng: &mut esnssm::rng::Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

fn reservoir(n: usize, m: usize) -> ReservoirParams {
    let mut rng = seeded(7);
    let w = gaussian(&mut rng, n, n);
    let w = &w * (0.8 / w.clone().svd(false, false).singular_values.max());
    let u = gaussian(&mut rng, n, m);
    ReservoirParams::new(w, u, DVector::zeros(n), 0.5, Activation::Tanh).unwrap()
}

fn bench_simulate(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate");
    for n in [50, 200] {
        let p = reservoir(n, 1);
        let inputs: Vec<_> = (0..1000).map(|k| DVector::from_element(1, (k as f64 * 0.1).sin())).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| simulate(&p, None, &DVector::zeros(n), black_box(&inputs), None).unwrap())
        });
    }
    group.finish();
}

fn bench_smoother(c: &mut Criterion) {
    let mut group = c.benchmark_group("kalman_smoother");
    for n in [4, 16] {
        let mut rng = seeded(3);
        let a = gaussian(&mut rng, n, n);
        let a = &a * (0.9 / a.clone().svd(false, false).singular_values.max());
        let lti = LtiModel::strictly_proper(a, gaussian(&mut rng, n, 1), gaussian(&mut rng, 2, n)).unwrap();
        let noise = NoiseModel::new(DMatrix::identity(n, n) * 0.01, DMatrix::identity(2, 2) * 0.1).unwrap();
        let prior = Prior::new(DVector::zeros(n), DMatrix::identity(n, n)).unwrap();
        let inputs = (0..500).map(|_| gaussian(&mut rng, 1, 1).column(0).into_owned()).collect();
        let outputs = (0..500).map(|_| gaussian(&mut rng, 2, 1).column(0).into_owned()).collect();
        let data = IdData::new(inputs, outputs).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| kalman_smoother(&lti, &noise, black_box(&data), &prior).unwrap())
        });
    }
    group.finish();
}

fn bench_expm(c: &mut Criterion) {
    let mut group = c.benchmark_group("expm");
    for n in [8, 64] {
        let a = gaussian(&mut seeded(5), n, n) * 0.5;
        group.bench_with_input(BenchmarkId::from_parameter(n), &a, |b, a| b.iter(|| expm(black_box(a)).unwrap()));
    }
    group.finish();
}

fn bench_certify(c: &mut Criterion) {
    let p = reservoir(6, 1);
    c.bench_function("certify_weighted/6", |b| b.iter(|| certify_weighted(black_box(&p), 4096).unwrap()));
}

criterion_group!(benches, bench_simulate, bench_smoother, bench_expm, bench_certify);
criterion_main!(benches);
