use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use sliced_ot::distributions::{contaminate, fragmented_hypercube};
use sliced_ot::empirical::wp_pow_sorted;
use sliced_ot::max_sliced::subgradient;
use sliced_ot::robust::{spectral_filter, FilterConfig};
use sliced_ot::transport::exact_ot;
use sliced_ot::{estimate_swp, rng, BenchmarkModel, ModelSpec};

fn one_dimensional(c: &mut Criterion) {
    let mut group = c.benchmark_group("wp_pow_sorted");
    for n in [1_000usize, 100_000] {
        let mut xs: Vec<f64> = (0..n).map(|i| ((i * 7919) % n) as f64).collect();
        let mut ys: Vec<f64> = (0..n).map(|i| ((i * 104_729) % n) as f64 + 0.5).collect();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| wp_pow_sorted(black_box(&xs), black_box(&ys), 2.0))
        });
    }
    group.finish();
}

fn sliced(c: &mut Criterion) {
    let (mu, nu) = BenchmarkModel::Two.pair(50, 0).expect("model");
    let x = mu.sample(2000, &mut rng::root(1)).expect("sample");
    let y = nu.sample(2000, &mut rng::root(2)).expect("sample");
    c.bench_function("estimate_swp n=2000 d=50 m=100", |b| {
        b.iter(|| estimate_swp(black_box(&x), black_box(&y), 2.0, 100, 3).expect("estimate"))
    });
}

fn subgradient_step(c: &mut Criterion) {
    let (x, y) = fragmented_hypercube(50, 10, 500, &mut rng::root(4)).expect("instance");
    let theta = vec![1.0 / 50f64.sqrt(); 50];
    c.bench_function("subgradient n=500 d=50", |b| {
        b.iter(|| subgradient(black_box(&x), black_box(&y), black_box(&theta), 2.0).expect("subgradient"))
    });
}

fn filter(c: &mut Criterion) {
    let clean = ModelSpec::standard_gaussian(20).sampler().expect("sampler");
    let noise = ModelSpec::product_noise(20).sampler().expect("sampler");
    let sample = contaminate(&clean, &noise, 0.1, 2000, &mut rng::root(5)).expect("sample");
    let cfg = FilterConfig::new(0.1, 1.0);
    c.bench_function("spectral_filter n=2000 d=20", |b| {
        b.iter(|| spectral_filter(black_box(&sample.points), &cfg).expect("filter"))
    });
}

fn network_simplex(c: &mut Criterion) {
    let mut group = c.benchmark_group("exact_ot");
    group.sample_size(10);
    for n in [100usize, 500] {
        let x = ModelSpec::standard_gaussian(5).sample(n, &mut rng::root(6)).expect("sample");
        let y = ModelSpec::standard_gaussian(5).sample(n, &mut rng::root(7)).expect("sample");
        let w = vec![1.0 / n as f64; n];
        let cost = |i: usize, j: usize| {
            x.row(i).iter().zip(y.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        };
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| exact_ot(black_box(&w), black_box(&w), cost).expect("transport"))
        });
    }
    group.finish();
}

criterion_group!(kernels, one_dimensional, sliced, subgradient_step, filter, network_simplex);
criterion_main!(kernels);
