//! Invariant suite run by `nsalpha validate`.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::Vector3;
use serde::Serialize;

use super::config::ExperimentConfig;
use crate::error::Result;
use crate::kernel::{curl, AlphaKernel};
use crate::mollifier::{beta_bound_check, composite_gauss_legendre, MollifierSpec};
use crate::particles::{self, ParticleEnsemble};
use crate::spectral::{GridSpec, SpectralField};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Check {
    /// Passes when `measured <= threshold`.
    fn at_most(name: &str, measured: f64, threshold: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: measured <= threshold,
            measured,
            threshold,
            detail,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {:<24} {:>11.3e} (limit {:.1e})  {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.measured,
                c.threshold,
                c.detail
            )?;
        }
        Ok(())
    }
}

/// `∫V^N = 4π∫₀^R V^N(r e₁) r² dr` by uniform composite Gauss–Legendre on
/// the point evaluation, independent of the graded rule behind the
/// normalization constant.
pub fn radial_mass(spec: &MollifierSpec, panels: usize) -> f64 {
    let integrand = |r: f64| 4.0 * PI * r * r * spec.eval(&Vector3::new(r, 0.0, 0.0));
    composite_gauss_legendre(integrand, 0.0, spec.support_radius(), panels)
}

/// Worst `max_k |k·û_k| / max|û|` over `count` random vorticities.
pub fn divergence_check(kernel: &AlphaKernel, count: usize, seed: u64) -> Result<f64> {
    let grid = *kernel.grid();
    let mut worst = 0.0f64;
    for i in 0..count as u64 {
        let omega = SpectralField::random_band_limited(grid, grid.dealias_band(), seed.wrapping_add(i))?;
        let u = kernel.velocity_from_vorticity(&omega)?;
        worst = worst.max(u.divergence_defect() / u.max_abs());
    }
    Ok(worst)
}

/// Relative residual of `curl u = (1 − α²Δ)^{-1} Pω`.
pub fn curl_identity_residual(kernel: &AlphaKernel, omega: &SpectralField) -> Result<f64> {
    let u = kernel.velocity_from_vorticity(omega)?;
    let a2 = kernel.alpha() * kernel.alpha();
    let expected = omega
        .leray_projected()
        .map_scalar(|k| if k == [0, 0, 0] { 0.0 } else { 1.0 / (1.0 + a2 * (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64) });
    Ok((&curl(&u) - &expected).max_abs() / expected.max_abs())
}

/// Largest relative gap between the literal pairwise sum and the grid
/// velocity at the particles.
pub fn oracle_residual(ens: &ParticleEnsemble, kernel: &AlphaKernel) -> Result<f64> {
    let band = kernel.grid().dealias_band();
    let g = particles::empirical_field_band(ens, *kernel.grid(), band)?;
    let u = kernel.velocity_from_vorticity(&g)?;
    let fast = particles::velocity_at_particles(ens, &u)?;
    let vh = ens.spec().spectrum(band);
    let scale = fast.iter().map(|(v, _)| v.norm()).fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for (i, (v, _)) in fast.iter().enumerate() {
        let d = particles::direct_velocity_at(ens, i, kernel, &vh, band)?;
        worst = worst.max((d - v).norm());
    }
    Ok(if scale > 0.0 { worst / scale } else { worst })
}

/// Run the full invariant suite for `config`. Checks that cannot be set up
/// are reported as failures.
pub fn validate(config: &ExperimentConfig) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut push = |r: Result<Check>, name: &str| {
        report.checks.push(r.unwrap_or_else(|e| Check {
            name: name.into(),
            passed: false,
            measured: f64::NAN,
            threshold: 0.0,
            detail: e.to_string(),
        }))
    };
    let grid = || GridSpec::new(config.grid);
    let kernel = || grid().and_then(|g| AlphaKernel::new(config.alpha, g));

    push(
        config.noise_model().and_then(|noise| {
            let g = grid()?;
            let r = noise.validate_assumption(g)?.max(noise.divergence_residual(g)?);
            Ok(Check::at_most("noise residual", r, 1e-12, format!("{} noise terms", noise.len())))
        }),
        "noise residual",
    );
    push(
        kernel().and_then(|k| {
            let r = divergence_check(&k, 20, config.seeds.master)?;
            Ok(Check::at_most("divergence-free velocity", r, 1e-12, "20 random vorticities".into()))
        }),
        "divergence-free velocity",
    );
    push(
        kernel().and_then(|k| {
            let g = *k.grid();
            let omega = SpectralField::random_band_limited(g, g.dealias_band(), config.seeds.master ^ 0x5eed)?;
            let r = curl_identity_residual(&k, &omega)?;
            Ok(Check::at_most("curl identity", r, 1e-12, "relative".into()))
        }),
        "curl identity",
    );
    for &side in &config.lattice_sides {
        let n = side * side * side;
        push(
            MollifierSpec::new(n, config.beta).map(|spec| {
                let coarse = radial_mass(&spec, 64);
                let fine = radial_mass(&spec, 128);
                let err = (fine - 1.0).abs().max((coarse - fine).abs());
                Check::at_most("mollifier mass", err, 1e-8, format!("N = {n}, |mass − 1| = {:.2e}", (fine - 1.0).abs()))
            }),
            "mollifier mass",
        );
    }
    let b = beta_bound_check(config.p, config.alpha_sobolev, config.beta);
    push(
        Ok(Check {
            name: "beta bound".into(),
            passed: config.beta > 0.0 && config.beta < b.bound,
            measured: config.beta,
            threshold: b.bound,
            detail: format!("slack {:.4}", b.beta_slack),
        }),
        "beta bound",
    );
    push(
        kernel().and_then(|k| {
            let g = *k.grid();
            let omega = match config.initial_vorticity() {
                Ok(w) if w.max_abs() > 0.0 => w,
                _ => SpectralField::random_band_limited(g, 2.min(g.dealias_band()), config.seeds.master)?,
            };
            let ens = particles::init_importance(&omega, 64, config.beta, config.seeds.master)?;
            let r = oracle_residual(&ens, &k)?;
            Ok(Check::at_most("oracle equivalence", r, 1e-6, "N = 64, relative".into()))
        }),
        "oracle equivalence",
    );
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radial_mass_converges_to_one() {
        for n in [1, 512, 4096] {
            let spec = MollifierSpec::new(n, 0.25).unwrap();
            let m = radial_mass(&spec, 128);
            assert!((m - 1.0).abs() <= 1e-12, "{m}");
        }
    }

    #[test]
    fn default_config_passes() {
        let report = validate(&ExperimentConfig::default());
        assert!(report.passed(), "{report}");
        assert_eq!(report.checks.len(), 8);
    }

    #[test]
    fn bad_beta_fails_with_slack() {
        let cfg = ExperimentConfig {
            beta: 0.4,
            ..Default::default()
        };
        let report = validate(&cfg);
        let failed = report.failures();
        assert_eq!(failed.len(), 1);
        assert_eq!(failed[0].name, "beta bound");
        assert!(failed[0].detail.contains("slack -0.07"), "{}", failed[0].detail);
    }

    #[test]
    fn parallel_noise_is_a_reported_failure() {
        let cfg = ExperimentConfig {
            noise: vec![crate::noise::SigmaSpec::SingleMode {
                eps: [0.2, 0.0, 0.0],
                kappa: [1, 0, 0],
                phase: crate::noise::Phase::Cos,
            }],
            ..Default::default()
        };
        let report = validate(&cfg);
        let failed = report.failures();
        assert_eq!(failed.len(), 1);
        assert_eq!(failed[0].name, "noise residual");
        assert!(failed[0].detail.contains("not divergence-free"));
    }
}
