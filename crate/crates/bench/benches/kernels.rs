//! Microbenchmarks for the kernels that dominate a solver iteration: FFT
//! backed spectral operators, characteristic tracing, and cubic spline
//! interpolation. Grid sizes mirror the production resolution of a single
//! kernel call rather than a whole solve.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use topt_core::data::{make_dataset, random_velocity, DatasetKind};
use topt_core::grid::{
    apply_inverse_regularization, gaussian_smooth, leray_project, spectral_gradient,
};
use topt_core::interp::interpolate;
use topt_core::transport::{solve_state_advection, trace_departure};
use topt_core::GridSpec;

fn bench_kernels(c: &mut Criterion) {
    let g = GridSpec::new(128, 128, 8).unwrap();
    let (m, _) = make_dataset(DatasetKind::Sinusoidal, g);
    let u = random_velocity(g, 7, 4, 0.7);

    // Scattered evaluation points: one per node, jittered off the lattice
    // so the spline cannot shortcut through exact knot hits.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let points: Vec<(f64, f64)> = (0..g.n1)
        .flat_map(|i1| (0..g.n2).map(move |i2| (i1, i2)))
        .map(|(i1, i2)| {
            let (a, b) = g.node(i1, i2);
            (a + rng.gen_range(-0.4..0.4) * g.h1(), b + rng.gen_range(-0.4..0.4) * g.h2())
        })
        .collect();

    let mut group = c.benchmark_group("kernels");
    group.sample_size(30).measurement_time(Duration::from_secs(3));

    group.bench_function("spectral_gradient_128", |b| {
        b.iter(|| spectral_gradient(black_box(&m)))
    });
    group.bench_function("gaussian_smooth_128", |b| {
        b.iter(|| gaussian_smooth(black_box(&m), 1.0))
    });
    group.bench_function("inverse_regularization_128", |b| {
        b.iter(|| apply_inverse_regularization(black_box(&u), 1e-3, 2).unwrap())
    });
    group.bench_function("leray_project_128", |b| {
        b.iter(|| leray_project(black_box(&u)))
    });
    group.bench_function("cubic_interp_16k_points", |b| {
        b.iter(|| interpolate(black_box(&m), black_box(&points)))
    });
    group.bench_function("trace_departure_128", |b| {
        b.iter(|| trace_departure(black_box(&u), g.ht()))
    });
    group.bench_function("forward_sweep_128x8", |b| {
        b.iter(|| solve_state_advection(black_box(&m), black_box(&u)))
    });

    group.finish();
}

criterion_group!(kernels, bench_kernels);
criterion_main!(kernels);
