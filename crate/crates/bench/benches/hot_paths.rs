use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use nsalpha_core::particles::{self, Drivers};
use nsalpha_core::{AlphaKernel, GridSpec, NoiseModel, ParticleDynamics, SolverConfig, SolverState, SpectralField, SpectralSolver};

fn omega(m: usize) -> SpectralField {
    let grid = GridSpec::new(m).unwrap();
    SpectralField::random_band_limited(grid, 3, 11).unwrap()
}

fn fft(c: &mut Criterion) {
    let mut group = c.benchmark_group("fft_round_trip");
    for m in [16, 32, 64] {
        let w = omega(m);
        group.bench_with_input(BenchmarkId::from_parameter(m), &w, |b, w| {
            b.iter(|| black_box(w.to_physical().to_spectral()))
        });
    }
    group.finish();
}

fn deposit_and_eval(c: &mut Criterion) {
    let w = omega(32);
    let grid = *w.grid();
    let band = grid.dealias_band();
    let kernel = AlphaKernel::new(0.5, grid).unwrap();
    let mut group = c.benchmark_group("particles");
    group.sample_size(10);
    for n in [512, 4096] {
        let ens = particles::init_importance(&w, n, 0.25, 3).unwrap();
        group.bench_with_input(BenchmarkId::new("deposit", n), &ens, |b, ens| {
            b.iter(|| black_box(particles::deposit_charges(ens, band)))
        });
        let g = particles::empirical_field_band(&ens, grid, band).unwrap();
        let u = kernel.velocity_from_vorticity(&g).unwrap();
        group.bench_with_input(BenchmarkId::new("eval", n), &ens, |b, ens| {
            b.iter(|| black_box(particles::velocity_at_particles(ens, &u).unwrap()))
        });
    }
    let ens = particles::init_lattice(&w, 8, 0.25).unwrap();
    let dynamics = ParticleDynamics::new(kernel, NoiseModel::none(), 0.05).unwrap();
    let drivers = Drivers::new(dynamics.noise(), 1, 2, 1e-3).unwrap();
    group.bench_function("step/512", |b| b.iter(|| black_box(particles::step(&ens, &dynamics, &drivers).unwrap())));
    group.finish();
}

fn solver_step(c: &mut Criterion) {
    let w = omega(32);
    let solver = SpectralSolver::new(SolverConfig::new(*w.grid(), 0.5, 0.05, 1e-3, NoiseModel::none())).unwrap();
    let state = SolverState::initial(w.dealiased());
    c.bench_function("solver_step/32", |b| b.iter(|| black_box(solver.step(&state, &[]).unwrap())));
}

criterion_group!(benches, fft, deposit_and_eval, solver_step);
criterion_main!(benches);
