use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use momentstein::metrics::empirical_wp_to_gaussian;
use momentstein::{
    kernel_from_moment_map, solve_moment_map, stein_discrepancy_upper, Backend, Factor, Measure, SolveOptions,
};

fn solve_grid(c: &mut Criterion) {
    let mu = Measure::uniform_box(1, -1.0, 1.0).unwrap();
    let opts = SolveOptions::default();
    c.bench_function("solve_grid1d_uniform", |b| {
        b.iter(|| solve_moment_map(black_box(&mu), Backend::Grid1d, &opts).unwrap())
    });
}

fn kernel_eval(c: &mut Criterion) {
    let mu = Measure::quartic(2, 1.0 / 12.0).unwrap();
    let (phi, _) = solve_moment_map(&mu, Backend::Auto, &SolveOptions::default()).unwrap();
    let tau = kernel_from_moment_map(&phi).unwrap();
    c.bench_function("kernel_eval_quartic_2d", |b| b.iter(|| tau.eval(black_box(&[0.3, -0.7])).unwrap()));
}

fn discrepancy(c: &mut Criterion) {
    let mu = Measure::exponential_centered(1).unwrap();
    let (phi, _) = solve_moment_map(&mu, Backend::Auto, &SolveOptions::default()).unwrap();
    c.bench_function("discrepancy_exponential", |b| {
        b.iter(|| stein_discrepancy_upper(black_box(&phi)).unwrap())
    });
}

fn matching(c: &mut Criterion) {
    let r3 = 3f64.sqrt();
    let mu = Measure::product(vec![Factor::uniform(-r3, r3).unwrap(); 2]).unwrap();
    let x = mu.sample(2000, 1).unwrap();
    let mut g = c.benchmark_group("matching");
    g.sample_size(10);
    g.bench_function("w2_to_gaussian_2d_2000", |b| {
        b.iter(|| empirical_wp_to_gaussian(black_box(&x), 2.0, 7).unwrap())
    });
    g.finish();
}

criterion_group!(benches, solve_grid, kernel_eval, discrepancy, matching);
criterion_main!(benches);
