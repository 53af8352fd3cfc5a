//! Pseudo-spectral reference solver for
//! `dω = [−L_uω + νΔω]dt − Σ_m L_{σ_m}ω ∘ dW^m`, `u = K_α ⋆ ω`,
//! stepped with a Stratonovich Heun scheme and 2/3 dealiasing.

use log::warn;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::AlphaKernel;
use crate::noise::{BrownianDriver, NoiseModel};
use crate::particles::snapshot_steps;
use crate::particles::step_index;
use crate::spectral::{GridSpec, PhysicalField, SpectralField, TensorField, DOMAIN_LENGTH};

/// Which gradient term the Lie derivative `L_vω = (∇ω)v − S ω` subtracts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stretching {
    /// `S = ∇v`, the vortex-stretching term transported by the particles.
    #[default]
    Classical,
    /// `S = (∇v)ᵀ`.
    Transpose,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diffusion {
    /// `νΔω` evaluated inside both Heun stages.
    #[default]
    Explicit,
    /// Exact factor `e^{−ν|k|²dt}` with Heun on the remaining terms.
    IntegratingFactor,
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub grid: GridSpec,
    pub alpha: f64,
    pub nu: f64,
    pub dt: f64,
    pub noise: NoiseModel,
    pub stretching: Stretching,
    pub diffusion: Diffusion,
}

impl SolverConfig {
    pub fn new(grid: GridSpec, alpha: f64, nu: f64, dt: f64, noise: NoiseModel) -> Self {
        Self {
            grid,
            alpha,
            nu,
            dt,
            noise,
            stretching: Stretching::default(),
            diffusion: Diffusion::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    pub omega: SpectralField,
    pub t: f64,
    pub steps: u64,
}

impl SolverState {
    pub fn initial(omega: SpectralField) -> Self {
        Self {
            omega,
            t: 0.0,
            steps: 0,
        }
    }
}

/// Snapshots `(t, ω̂(t))` of a run and the final state.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub snapshots: Vec<(f64, SpectralField)>,
    pub final_state: SolverState,
}

/// `(∇ω)v − S ω` evaluated pointwise on the grid, transformed and dealiased.
pub fn lie_derivative(
    omega: &SpectralField,
    v: &PhysicalField,
    grad_v: &TensorField,
    stretching: Stretching,
) -> Result<SpectralField> {
    let g = *omega.grid();
    if v.grid().modes() != g.modes() || grad_v.grid().modes() != g.modes() {
        return Err(Error::GridMismatch {
            left: g.modes(),
            right: v.grid().modes().max(grad_v.grid().modes()),
        });
    }
    let w = omega.to_physical();
    let gw = omega.gradient_tensor();
    Ok(lie_from_parts(g, &w, &gw, v.samples(), grad_v.entries(), stretching))
}

fn lie_from_parts(
    g: GridSpec,
    w: &PhysicalField,
    gw: &TensorField,
    v: &[Vector3<f64>],
    gv: &[Matrix3<f64>],
    stretching: Stretching,
) -> SpectralField {
    let samples = (0..g.len())
        .map(|n| {
            let s = match stretching {
                Stretching::Classical => gv[n] * w.at(n),
                Stretching::Transpose => gv[n].tr_mul(&w.at(n)),
            };
            gw.at(n) * v[n] - s
        })
        .collect();
    let mut out = PhysicalField::from_samples(g, samples)
        .expect("sample count matches grid")
        .to_spectral();
    out.dealias_in_place();
    out
}

/// Grid samples of one noise field and its gradient.
#[derive(Clone, Debug)]
struct NoiseSamples {
    sigma: Vec<Vector3<f64>>,
    grad: Vec<Matrix3<f64>>,
}

#[derive(Clone, Debug)]
pub struct SpectralSolver {
    config: SolverConfig,
    kernel: AlphaKernel,
    noise: Vec<NoiseSamples>,
    // −|k|² in FFT order
    laplacian: Vec<f64>,
}

/// Drift and noise increments of one Heun stage.
struct Tendencies {
    drift: SpectralField,
    noise: SpectralField,
}

impl SpectralSolver {
    pub fn new(config: SolverConfig) -> Result<Self> {
        if !(config.dt > 0.0 && config.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", config.dt)));
        }
        if !(config.nu >= 0.0 && config.nu.is_finite()) {
            return Err(Error::InvalidArgument(format!("viscosity must be >= 0, got {}", config.nu)));
        }
        let g = config.grid;
        let kernel = AlphaKernel::new(config.alpha, g)?;
        let noise = config
            .noise
            .terms()
            .iter()
            .map(|term| {
                let (sigma, grad) = (0..g.len()).map(|n| term.eval_with_gradient(&g.node(n))).unzip();
                NoiseSamples { sigma, grad }
            })
            .collect();
        let laplacian = (0..g.len())
            .map(|idx| {
                let k = g.wavevector(idx);
                -((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64)
            })
            .collect();
        Ok(Self {
            config,
            kernel,
            noise,
            laplacian,
        })
    }

    #[inline]
    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    #[inline]
    pub fn kernel(&self) -> &AlphaKernel {
        &self.kernel
    }

    fn check(&self, omega: &SpectralField) -> Result<()> {
        if omega.grid().modes() != self.config.grid.modes() {
            return Err(Error::GridMismatch {
                left: omega.grid().modes(),
                right: self.config.grid.modes(),
            });
        }
        Ok(())
    }

    fn viscous(&self, omega: &SpectralField) -> SpectralField {
        let nu = self.config.nu;
        omega.map_modes(|idx, c| c.map(|z| z * (nu * self.laplacian[idx])))
    }

    /// `−L_uω` with `u = K_α ⋆ ω`.
    pub fn nonlinear_part(&self, omega: &SpectralField) -> Result<SpectralField> {
        self.check(omega)?;
        let u = self.kernel.velocity_from_vorticity(omega)?;
        Ok(lie_derivative(omega, &u.to_physical(), &u.gradient_tensor(), self.config.stretching)?.scaled(-1.0))
    }

    /// `−L_uω + νΔω`, dealiased.
    pub fn rhs_deterministic(&self, omega: &SpectralField) -> Result<SpectralField> {
        let mut out = self.nonlinear_part(omega)?;
        out.axpy(1.0, &self.viscous(omega));
        out.dealias_in_place();
        Ok(out)
    }

    /// Drift times `dt` (without diffusion when it is integrated exactly)
    /// and the noise increment `−Σ_m L_{σ_m}ω ΔW^m`.
    fn tendencies(&self, omega: &SpectralField, dw: &[f64]) -> Result<Tendencies> {
        let g = self.config.grid;
        let dt = self.config.dt;
        let w = omega.to_physical();
        let gw = omega.gradient_tensor();
        let u = self.kernel.velocity_from_vorticity(omega)?;
        let (up, gu) = (u.to_physical(), u.gradient_tensor());
        let mut drift = lie_from_parts(g, &w, &gw, up.samples(), gu.entries(), self.config.stretching);
        drift.scale_in_place(-dt);
        if self.config.diffusion == Diffusion::Explicit {
            drift.axpy(dt, &self.viscous(omega));
            drift.dealias_in_place();
        }
        let mut noise = SpectralField::zeros(g);
        for (samples, &d) in self.noise.iter().zip(dw) {
            if d == 0.0 {
                continue;
            }
            let l = lie_from_parts(g, &w, &gw, &samples.sigma, &samples.grad, self.config.stretching);
            noise.axpy(-d, &l);
        }
        Ok(Tendencies { drift, noise })
    }

    fn integrating_factor(&self, omega: &SpectralField) -> SpectralField {
        let a = self.config.nu * self.config.dt;
        omega.map_modes(|idx, c| c.map(|z| z * (a * self.laplacian[idx]).exp()))
    }

    /// One Heun step driven by the per-term increments `dw`.
    pub fn step(&self, state: &SolverState, dw: &[f64]) -> Result<SolverState> {
        self.check(&state.omega)?;
        if dw.len() != self.noise.len() {
            return Err(Error::InvalidArgument(format!(
                "{} increments for {} noise terms",
                dw.len(),
                self.noise.len()
            )));
        }
        if dw.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidArgument("non-finite Brownian increment".into()));
        }
        let w0 = &state.omega;
        let k1 = self.tendencies(w0, dw)?;
        let mut w1 = w0.clone();
        w1.axpy(1.0, &k1.drift);
        w1.axpy(1.0, &k1.noise);
        let exact = self.config.diffusion == Diffusion::IntegratingFactor;
        if exact {
            w1 = self.integrating_factor(&w1);
        }
        w1.dealias_in_place();
        let k2 = self.tendencies(&w1, dw)?;
        let mut next = if exact {
            // ω' = E(ω + ½k₁) + ½k₂(ω₁) with E = e^{νΔdt}
            let mut half = w0.clone();
            half.axpy(0.5, &k1.drift);
            half.axpy(0.5, &k1.noise);
            let mut out = self.integrating_factor(&half);
            out.axpy(0.5, &k2.drift);
            out.axpy(0.5, &k2.noise);
            out
        } else {
            let mut out = w0.clone();
            out.axpy(0.5, &k1.drift);
            out.axpy(0.5, &k1.noise);
            out.axpy(0.5, &k2.drift);
            out.axpy(0.5, &k2.noise);
            out
        };
        next.dealias_in_place();
        let steps = state.steps + 1;
        let t = steps as f64 * self.config.dt;
        if !next.is_finite() {
            return Err(Error::BlowUp {
                step: steps,
                time: t,
                what: "vorticity coefficients are not finite".into(),
            });
        }
        Ok(SolverState { omega: next, t, steps })
    }

    /// Advective CFL number `dt · max|u| · M/(2π)`.
    pub fn cfl_number(&self, omega: &SpectralField) -> Result<f64> {
        let u = self.kernel.velocity_from_vorticity(omega)?.to_physical();
        let m = self.config.grid.modes() as f64;
        Ok(self.config.dt * u.sup_norm() * m / DOMAIN_LENGTH)
    }

    /// Integrate to `t_final`, recording `ω̂` at `snapshot_times`. `drivers`
    /// supply one increment per noise term and step, and must share `dt`.
    pub fn solve(
        &self,
        omega0: &SpectralField,
        t_final: f64,
        drivers: &[BrownianDriver],
        snapshot_times: &[f64],
    ) -> Result<Trajectory> {
        self.solve_observed(omega0, t_final, drivers, snapshot_times, |_| Ok(()))
    }

    /// As [`SpectralSolver::solve`], also handing every state, the initial
    /// one included, to `observe`.
    pub fn solve_observed(
        &self,
        omega0: &SpectralField,
        t_final: f64,
        drivers: &[BrownianDriver],
        snapshot_times: &[f64],
        mut observe: impl FnMut(&SolverState) -> Result<()>,
    ) -> Result<Trajectory> {
        self.check(omega0)?;
        let dt = self.config.dt;
        if drivers.len() != self.noise.len() {
            return Err(Error::InvalidArgument(format!(
                "{} drivers for {} noise terms",
                drivers.len(),
                self.noise.len()
            )));
        }
        if let Some(d) = drivers.iter().find(|d| (d.dt() - dt).abs() > 1e-12 * dt) {
            return Err(Error::InvalidArgument(format!("driver dt {} differs from solver dt {dt}", d.dt())));
        }
        let total = step_index(t_final, dt)
            .ok_or_else(|| Error::InvalidArgument(format!("final time {t_final} is not a multiple of dt = {dt}")))?;
        let wanted = snapshot_steps(snapshot_times, dt)?;
        if wanted.last().is_some_and(|&s| s > total) {
            return Err(Error::InvalidArgument("snapshot after the final time".into()));
        }
        let mut state = SolverState::initial(omega0.dealiased());
        let mut snapshots = Vec::with_capacity(wanted.len());
        let mut next_snap = wanted.iter().peekable();
        let mut warned = false;
        loop {
            observe(&state)?;
            if next_snap.peek().is_some_and(|&&s| s == state.steps) {
                snapshots.push((state.t, state.omega.clone()));
                next_snap.next();
            }
            if state.steps >= total {
                break;
            }
            if !warned && state.steps % 10 == 0 {
                let cfl = self.cfl_number(&state.omega)?;
                if cfl > 0.5 {
                    warn!("solver: CFL number {cfl:.3} exceeds 0.5 at t = {}", state.t);
                    warned = true;
                }
            }
            let dw: Vec<f64> = drivers.iter().map(|d| d.increment(state.steps)).collect();
            state = self.step(&state, &dw)?;
        }
        Ok(Trajectory {
            snapshots,
            final_state: state,
        })
    }
}

/// Backward generator applied to a test field `f`:
/// `νΔf + ½ Σ_m tr(σ_mσ_mᵀ Hf) + ½ Σ_m tr((∇σ_m)(∇σ_m)ᵀ Hf)`, componentwise.
/// Constant noise uses the multiplier `−ν|k|² − ½Σ_m(σ_m·k)²`.
pub fn ito_generator_apply(f: &SpectralField, noise: &NoiseModel, nu: f64) -> Result<SpectralField> {
    let g = *f.grid();
    let lap = |k: [i64; 3]| -((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64);
    if noise.is_constant() {
        let a: Vec<Vector3<f64>> = noise.terms().iter().map(|t| t.eval(&Vector3::zeros())).collect();
        return Ok(f.map_scalar(|k| {
            let kv = Vector3::new(k[0] as f64, k[1] as f64, k[2] as f64);
            nu * lap(k) - 0.5 * a.iter().map(|s| s.dot(&kv).powi(2)).sum::<f64>()
        }));
    }
    let mut out = f.map_scalar(|k| nu * lap(k)).to_physical();
    // hessians[i][j] holds ∂_i∂_j f for j >= i
    let d: Vec<SpectralField> = (0..3).map(|i| f.derivative(i)).collect();
    let mut hess: Vec<Vec<PhysicalField>> = Vec::with_capacity(3);
    for i in 0..3 {
        hess.push((0..3).map(|j| if j >= i { d[i].derivative(j).to_physical() } else { PhysicalField::zeros(g) }).collect());
    }
    for n in 0..g.len() {
        let x = g.node(n);
        let mut acc = Vector3::zeros();
        for term in noise.terms() {
            let (s, gs) = term.eval_with_gradient(&x);
            let a = s * s.transpose() + gs * gs.transpose();
            for i in 0..3 {
                for j in 0..3 {
                    let h = if j >= i { hess[i][j].at(n) } else { hess[j][i].at(n) };
                    acc += h * (0.5 * a[(i, j)]);
                }
            }
        }
        out.samples_mut()[n] += acc;
    }
    Ok(out.to_spectral())
}
