//! Acceptance suite. Every criterion prints one PASS/FAIL line; the process
//! exits nonzero when any of them fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use num_complex::Complex64;
use nsalpha_core::harness::{self, validate, ExperimentConfig};
use nsalpha_core::noise::{common_drivers, Phase};
use nsalpha_core::particles::{self, Drivers};
use nsalpha_core::{
    AlphaKernel, GridSpec, MollifierSpec, NoiseModel, ParticleDynamics, PhysicalField, SigmaField, SolverConfig,
    SpectralField, SpectralSolver,
};

struct Outcome {
    passed: bool,
    summary: String,
}

fn outcome(passed: bool, summary: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        summary: summary.into(),
    }
}

fn grid(m: usize) -> GridSpec {
    GridSpec::new(m).unwrap()
}

fn mollifier_mass() -> Outcome {
    let cfg = ExperimentConfig::default();
    let mut worst = 0.0f64;
    let mut richardson = 0.0f64;
    for n in cfg.lattice_sides.iter().map(|s| s.pow(3)) {
        let spec = MollifierSpec::new(n, cfg.beta).unwrap();
        let coarse = validate::radial_mass(&spec, 64);
        let fine = validate::radial_mass(&spec, 128);
        worst = worst.max((fine - 1.0).abs());
        richardson = richardson.max((fine - coarse).abs());
    }
    outcome(
        worst <= 1e-8 && richardson <= 1e-8,
        format!("max |mass - 1| = {worst:.2e}, 64 vs 128 panels {richardson:.2e} (limit 1e-8)"),
    )
}

fn divergence_free() -> Outcome {
    let kernel = AlphaKernel::new(0.5, grid(32)).unwrap();
    let worst = validate::divergence_check(&kernel, 20, 2024).unwrap();
    outcome(worst <= 1e-12, format!("max |k.u_k|/|u| = {worst:.2e} over 20 fields (limit 1e-12)"))
}

fn analytic_decay() -> Outcome {
    let g = grid(16);
    let omega0 = PhysicalField::from_fn(g, |x| Vector3::new(0.0, 0.0, x[0].cos())).to_spectral();
    let solver = SpectralSolver::new(SolverConfig::new(g, 1.0, 0.05, 1e-3, NoiseModel::none())).unwrap();
    let nonlinear = solver.nonlinear_part(&omega0).unwrap().max_abs();
    let traj = solver.solve(&omega0, 1.0, &[], &[1.0]).unwrap();
    let (t, omega) = &traj.snapshots[0];
    let exact = omega0.scaled((-0.05 * t).exp()).to_physical();
    let got = omega.to_physical();
    let dev = (0..g.len()).map(|n| (got.at(n) - exact.at(n)).norm()).fold(0.0, f64::max);
    outcome(
        dev <= 1e-5 && nonlinear <= 1e-12,
        format!("sup deviation {dev:.2e} (limit 1e-5), nonlinear part at t = 0 {nonlinear:.2e} (limit 1e-12)"),
    )
}

fn oracle_equivalence() -> Outcome {
    let g = grid(16);
    let omega0 = ExperimentConfig {
        grid: 16,
        ..Default::default()
    }
    .initial_vorticity()
    .unwrap();
    let ens = particles::init_importance(&omega0, 64, 0.25, 17).unwrap();
    let kernel = AlphaKernel::new(0.5, g).unwrap();
    let rel = validate::oracle_residual(&ens, &kernel).unwrap();
    outcome(rel <= 1e-6, format!("relative gap {rel:.2e} (limit 1e-6)"))
}

fn relative_shift_error(omega0: &SpectralField, dt_fine: f64, factor: u64) -> f64 {
    let g = *omega0.grid();
    let a = Vector3::new(0.3, 0.0, 0.0);
    let t_final = 0.5;
    let dt = dt_fine * factor as f64;
    let noise = NoiseModel::new(vec![SigmaField::constant(a)]);
    let drivers: Vec<_> = common_drivers(&noise, 41, dt_fine)
        .unwrap()
        .into_iter()
        .map(|d| d.coarsened(factor))
        .collect();
    let stoch = SpectralSolver::new(SolverConfig::new(g, 0.5, 0.05, dt, noise)).unwrap();
    let det = SpectralSolver::new(SolverConfig::new(g, 0.5, 0.05, dt, NoiseModel::none())).unwrap();
    let ws = stoch.solve(omega0, t_final, &drivers, &[t_final]).unwrap();
    let wd = det.solve(omega0, t_final, &[], &[t_final]).unwrap();
    let steps = (t_final / dt).round() as u64;
    let w_t = drivers[0].path_value(steps);
    let (s, d) = (&ws.snapshots[0].1, &wd.snapshots[0].1);
    let shifted = d.map_modes(|idx, c| {
        let k = g.wavevector(idx);
        let phase = Complex64::from_polar(1.0, -(k[0] as f64 * a[0]) * w_t);
        c.map(|z| z * phase)
    });
    let mut num = 0.0;
    for idx in 0..g.len() {
        let (x, y) = (s.coeff(idx), shifted.coeff(idx));
        num += (0..3).map(|c| (x[c] - y[c]).norm_sqr()).sum::<f64>();
    }
    num.sqrt() / spectral_l2(d)
}

fn spectral_l2(f: &SpectralField) -> f64 {
    (0..f.grid().len())
        .map(|idx| f.coeff(idx).iter().map(|z| z.norm_sqr()).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

fn shift_equivariance() -> Outcome {
    let omega0 = ExperimentConfig {
        grid: 16,
        ..Default::default()
    }
    .initial_vorticity()
    .unwrap();
    let e1 = relative_shift_error(&omega0, 5e-4, 2);
    let e2 = relative_shift_error(&omega0, 5e-4, 1);
    let ratio = e1 / e2;
    outcome(
        e1 <= 5e-3 && (3.0..=5.0).contains(&ratio),
        format!("relative error {e1:.2e} at dt = 1e-3 (limit 5e-3), {e2:.2e} at dt = 5e-4, ratio {ratio:.2} (want 3..5)"),
    )
}

fn convergence_series(cfg: &ExperimentConfig) -> (bool, String) {
    let table = harness::run_convergence(cfg).unwrap();
    let series: Vec<f64> = table
        .series("H^-1")
        .iter()
        .map(|r| r.sup_error.unwrap_or(f64::INFINITY))
        .collect();
    let decreasing = series.windows(2).all(|w| w[1] < w[0]);
    let halved = series.last().unwrap() <= &(0.5 * series[0]);
    let text = series.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(" > ");
    (decreasing && halved, text)
}

fn particle_convergence() -> Outcome {
    let plain = ExperimentConfig::default();
    let noisy = ExperimentConfig::from_toml_str(
        r#"noise = [{ type = "single_mode", eps = [0.0, 0.0, 0.2], kappa = [1, 0, 0], phase = "cos" }]"#,
    )
    .unwrap();
    let (ok0, s0) = convergence_series(&plain);
    let (ok1, s1) = convergence_series(&noisy);
    outcome(ok0 && ok1, format!("H^-1 sup errors, sigma = 0: {s0}; single mode: {s1}"))
}

fn flowmap_agreement() -> Outcome {
    let cfg = ExperimentConfig::default();
    let report = harness::run_flowmap(&cfg).unwrap();
    let t = cfg.flowmap.t_final;
    let z = report.max_z(t);
    let scale = report
        .rows
        .iter()
        .map(|r| r.solver_re.hypot(r.solver_im))
        .fold(0.0, f64::max);
    let initial = report
        .rows
        .iter()
        .filter(|r| r.t == 0.0)
        .map(|r| (r.estimate_re - r.solver_re).hypot(r.estimate_im - r.solver_im))
        .fold(0.0, f64::max)
        / scale;
    outcome(
        z <= 3.0 && initial <= 1e-3,
        format!("max z at t = {t}: {z:.2} (limit 3), relative gap at t = 0: {initial:.2e} (limit 1e-3)"),
    )
}

fn det_defect(dt_fine: f64, factor: u64) -> f64 {
    let g = grid(32);
    let omega0 = ExperimentConfig::default().initial_vorticity().unwrap();
    let ens = particles::init_lattice(&omega0, 8, 0.25).unwrap();
    let sigma = SigmaField::single_mode(Vector3::new(0.0, 0.0, 0.2), [1, 0, 0], Phase::Cos).unwrap();
    let dynamics = ParticleDynamics::new(AlphaKernel::new(0.5, g).unwrap(), NoiseModel::new(vec![sigma]), 0.05).unwrap();
    let drivers = Drivers::new(dynamics.noise(), 5, 6, dt_fine).unwrap().coarsened(factor);
    particles::run(&ens, 0.5, &dynamics, &drivers, &[], g)
        .unwrap()
        .ensemble
        .max_det_defect()
}

fn volume_preservation() -> Outcome {
    let d1 = det_defect(5e-4, 2);
    let d2 = det_defect(5e-4, 1);
    let ratio = d1 / d2;
    outcome(
        d1 <= 1e-3 && (3.0..=5.0).contains(&ratio),
        format!("max |det Phi - 1| = {d1:.2e} at dt = 1e-3 (limit 1e-3), {d2:.2e} at dt = 5e-4, ratio {ratio:.2} (want 3..5)"),
    )
}

fn noise_assumption() -> Outcome {
    let g = grid(32);
    let constant = NoiseModel::new(vec![SigmaField::constant(Vector3::new(0.3, -0.1, 0.2))]);
    let single = NoiseModel::new(vec![
        SigmaField::single_mode(Vector3::new(0.0, 0.0, 0.3), [1, 1, 0], Phase::Sin).unwrap(),
        SigmaField::single_mode(Vector3::new(0.2, -0.2, 0.0), [1, 1, 2], Phase::Cos).unwrap(),
    ]);
    let r = constant
        .validate_assumption(g)
        .unwrap()
        .max(single.validate_assumption(g).unwrap());
    let rejects = SigmaField::single_mode(Vector3::new(0.2, 0.4, 0.0), [1, 2, 0], Phase::Sin).is_err();
    outcome(
        r <= 1e-12 && rejects,
        format!("residual {r:.2e} (limit 1e-12), parallel eps and kappa rejected: {rejects}"),
    )
}

fn determinism() -> Outcome {
    let cfg = ExperimentConfig::from_toml_str(
        r#"
grid = 16
t_final = 0.05
dt = 0.01
snapshot_times = [0.0, 0.05]
lattice_sides = [3, 4]
noise = [{ type = "single_mode", eps = [0.0, 0.0, 0.3], kappa = [1, 1, 0], phase = "sin" }]
"#,
    )
    .unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| harness::run_convergence(&cfg).unwrap())
    };
    let (a, b, c) = (run(1), run(8), run(8));
    let same = a.same_results(&b) && b.same_results(&c);
    outcome(same, format!("{} rows identical at 1 and 8 threads: {same}", a.rows.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, u64); 10] = [
        ("mollifier mass", mollifier_mass, 1),
        ("divergence-free velocity", divergence_free, 5),
        ("analytic decay", analytic_decay, 30),
        ("oracle equivalence", oracle_equivalence, 10),
        ("constant-sigma shift", shift_equivariance, 120),
        ("particle convergence", particle_convergence, 900),
        ("flow-map agreement", flowmap_agreement, 600),
        ("volume preservation", volume_preservation, u64::MAX),
        ("noise assumption", noise_assumption, u64::MAX),
        ("determinism", determinism, u64::MAX),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let out = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*budget);
        let passed = out.passed && in_time;
        if !passed {
            failed += 1;
        }
        let budget = if *budget == u64::MAX { String::new() } else { format!(" / {budget} s") };
        println!(
            "{} {:>2} {name}: {} [{:.1} s{budget}]",
            if passed { "PASS" } else { "FAIL" },
            i + 1,
            out.summary,
            elapsed.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
