//! Interacting vortex particles: positions `X^i`, deformation matrices `Φ^i`
//! and fixed weights `w^i`, coupled through the mollified velocity
//! `u^N = K_α ⋆ (V^N ⋆ μ^N)`.

pub mod fourier;

use std::f64::consts::TAU;

use log::debug;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::{cross_ik, AlphaKernel};
use crate::mollifier::{MollifierSpec, MollifierSpectrum};
use crate::noise::{BrownianDriver, NoiseModel, StreamId};
use crate::spectral::{
    wrap_point, CVec3, GridSpec, PhysicalField, SpectralField, TensorField, TORUS_VOLUME,
};

pub use fourier::{Evaluator, HalfSpace, PointValue};

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    positions: Vec<Vector3<f64>>,
    phi: Vec<Matrix3<f64>>,
    weights: Vec<Vector3<f64>>,
    ids: Vec<u64>,
    spec: MollifierSpec,
    t: f64,
    steps: u64,
}

impl ParticleEnsemble {
    /// Ensemble at `t = 0` with `Φ = Id`; `ids` key the per-particle noise
    /// streams and fix the summation order.
    pub fn new(
        positions: Vec<Vector3<f64>>,
        weights: Vec<Vector3<f64>>,
        ids: Vec<u64>,
        beta: f64,
    ) -> Result<Self> {
        let n = positions.len();
        if weights.len() != n || ids.len() != n {
            return Err(Error::InvalidArgument(
                "positions, weights and ids must have equal length".into(),
            ));
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("particle ids must be distinct".into()));
        }
        Ok(Self {
            positions: positions.iter().map(wrap_point).collect(),
            phi: vec![Matrix3::identity(); n],
            weights,
            ids,
            spec: MollifierSpec::new(n.max(1), beta)?,
            t: 0.0,
            steps: 0,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    #[inline]
    pub fn phi(&self) -> &[Matrix3<f64>] {
        &self.phi
    }

    #[inline]
    pub fn weights(&self) -> &[Vector3<f64>] {
        &self.weights
    }

    #[inline]
    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    #[inline]
    pub fn spec(&self) -> &MollifierSpec {
        &self.spec
    }

    #[inline]
    pub fn time(&self) -> f64 {
        self.t
    }

    #[inline]
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Vortex charges `Φ^i w^i`.
    pub fn charges(&self) -> Vec<Vector3<f64>> {
        self.phi.iter().zip(&self.weights).map(|(p, w)| p * w).collect()
    }

    /// `(1/N) Σ_i Φ^i w^i`.
    pub fn mean_charge(&self) -> Vector3<f64> {
        let q = self.charges();
        let order = self.id_order();
        let mut acc = Vector3::zeros();
        for &i in &order {
            acc += q[i];
        }
        acc / self.len().max(1) as f64
    }

    pub fn max_det_defect(&self) -> f64 {
        self.phi
            .iter()
            .map(|p| (p.determinant() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Indices sorted by id.
    fn id_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_unstable_by_key(|&i| self.ids[i]);
        order
    }

    /// Ensemble with particle `perm[j]` moved to slot `j`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            positions: perm.iter().map(|&i| self.positions[i]).collect(),
            phi: perm.iter().map(|&i| self.phi[i]).collect(),
            weights: perm.iter().map(|&i| self.weights[i]).collect(),
            ids: perm.iter().map(|&i| self.ids[i]).collect(),
            ..self.clone()
        }
    }
}

/// Real field values and gradients of a band-limited spectral field at
/// scattered points, by direct summation of every retained mode.
pub fn evaluate_at(field: &SpectralField, points: &[Vector3<f64>]) -> Result<Vec<PointValue>> {
    let band = field.support_band();
    let limit = field.grid().modes() / 2 - 1;
    if band > limit {
        return Err(Error::BandTooLarge { band, limit });
    }
    let ev = Evaluator::new(band, |k| field.get(k).expect("band inside grid"));
    Ok(ev.eval(points))
}

/// `N = n³` particles at the cell centres of a uniform lattice, with weights
/// `(2π)³ ω₀(η^i)` so that `(1/N) Σ_i w^i` is the lattice quadrature of
/// `∫ ω₀`.
pub fn init_lattice(omega0: &SpectralField, n_per_axis: usize, beta: f64) -> Result<ParticleEnsemble> {
    if n_per_axis < 2 {
        return Err(Error::InvalidArgument(format!(
            "lattice needs at least 2 points per axis, got {n_per_axis}"
        )));
    }
    let h = TAU / n_per_axis as f64;
    let n = n_per_axis.pow(3);
    let positions: Vec<Vector3<f64>> = (0..n)
        .map(|i| {
            let a = i % n_per_axis;
            let b = (i / n_per_axis) % n_per_axis;
            let c = i / (n_per_axis * n_per_axis);
            Vector3::new(a as f64 + 0.5, b as f64 + 0.5, c as f64 + 0.5) * h
        })
        .collect();
    let weights = evaluate_at(omega0, &positions)?
        .into_iter()
        .map(|(v, _)| v * TORUS_VOLUME)
        .collect();
    ParticleEnsemble::new(positions, weights, (0..n as u64).collect(), beta)
}

/// `‖ω₀‖_{L¹}` and `max |ω₀|` from samples on a fine grid.
fn l1_and_sup(omega0: &SpectralField) -> (f64, f64) {
    let fine = GridSpec::new(128.max(omega0.grid().modes())).expect("valid grid");
    let phys = omega0.resampled(fine).to_physical();
    let h = fine.spacing();
    let l1: f64 = phys.samples().iter().map(|v| v.norm()).sum::<f64>() * h * h * h;
    (l1, phys.sup_norm())
}

/// `N` i.i.d. particles with density `|ω₀|/‖ω₀‖_{L¹}` (rejection sampling)
/// and weights `h₀ = ω₀ ‖ω₀‖_{L¹}/|ω₀|`.
pub fn init_importance(omega0: &SpectralField, n: usize, beta: f64, seed: u64) -> Result<ParticleEnsemble> {
    let (l1, sup) = l1_and_sup(omega0);
    if sup == 0.0 {
        return Err(Error::ZeroVorticity);
    }
    let bound = 1.01 * sup;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let batch = 1024;
    while positions.len() < n {
        let proposals: Vec<Vector3<f64>> = (0..batch)
            .map(|_| Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()) * TAU)
            .collect();
        let values = evaluate_at(omega0, &proposals)?;
        for (x, (v, _)) in proposals.into_iter().zip(values) {
            let mag = v.norm();
            if rng.gen::<f64>() * bound < mag && positions.len() < n {
                positions.push(x);
                weights.push(v * (l1 / mag));
            }
        }
    }
    ParticleEnsemble::new(positions, weights, (0..n as u64).collect(), beta)
}

/// `Σ_i q_i e^{−ik·X_i}` over `k₃ ≥ 0`, summed in id order.
pub fn deposit_charges(ens: &ParticleEnsemble, band: usize) -> HalfSpace {
    let order = ens.id_order();
    let q = ens.charges();
    let xs: Vec<_> = order.iter().map(|&i| ens.positions[i]).collect();
    let qs: Vec<_> = order.iter().map(|&i| q[i]).collect();
    fourier::deposit(band, &xs, &qs)
}

/// `ĝ_k = V̂^N(k) S_k / ((2π)³ N)`.
fn field_coefficient(s: &HalfSpace, vhat: &MollifierSpectrum, n: usize, k: [i64; 3]) -> CVec3 {
    let scale = vhat.at(k) / (TORUS_VOLUME * n as f64);
    s.get(k).map(|z| z * scale)
}

/// Coefficients of `g^N = V^N ⋆ μ^N` on every non-Nyquist mode of `grid`.
pub fn empirical_field(ens: &ParticleEnsemble, grid: GridSpec) -> Result<SpectralField> {
    let band = grid.modes() / 2 - 1;
    empirical_field_band(ens, grid, band)
}

/// Coefficients of `g^N` on `max_j |k_j| <= band`, zero elsewhere.
pub fn empirical_field_band(ens: &ParticleEnsemble, grid: GridSpec, band: usize) -> Result<SpectralField> {
    if band >= grid.modes() / 2 {
        return Err(Error::BandTooLarge {
            band,
            limit: grid.modes() / 2 - 1,
        });
    }
    let mut out = SpectralField::zeros(grid);
    if ens.is_empty() {
        return Ok(out);
    }
    let s = deposit_charges(ens, band);
    let vhat = ens.spec.cached_spectrum(band);
    let b = band as i64;
    for k3 in -b..=b {
        for k2 in -b..=b {
            for k1 in -b..=b {
                let k = [k1, k2, k3];
                let idx = grid.index_of(k).expect("band inside grid");
                out.set_coeff(idx, field_coefficient(&s, &vhat, ens.len(), k));
            }
        }
    }
    Ok(out)
}

/// Grid velocity `u^N = K_α ⋆ g^N` and its gradient, with `g^N` truncated to
/// the kernel grid's dealiasing band.
pub fn velocity_field(ens: &ParticleEnsemble, kernel: &AlphaKernel) -> Result<(PhysicalField, TensorField)> {
    let grid = *kernel.grid();
    let g = empirical_field_band(ens, grid, grid.dealias_band())?;
    let u = kernel.velocity_from_vorticity(&g)?;
    Ok((u.to_physical(), u.gradient_tensor()))
}

/// `(u(X^i), ∇u(X^i))` by direct summation of every retained mode of `u`.
pub fn velocity_at_particles(ens: &ParticleEnsemble, u: &SpectralField) -> Result<Vec<PointValue>> {
    evaluate_at(u, ens.positions())
}

/// Literal pairwise sum `(1/N) Σ_{j≠i} G(X^i − X^j) Φ^j w^j`.
pub fn direct_velocity_at(
    ens: &ParticleEnsemble,
    i: usize,
    kernel: &AlphaKernel,
    v_hat: &MollifierSpectrum,
    band: usize,
) -> Result<Vector3<f64>> {
    if i >= ens.len() {
        return Err(Error::InvalidArgument(format!("particle {i} out of range")));
    }
    let q = ens.charges();
    let xi = ens.positions[i];
    let mut acc = Vector3::zeros();
    for j in ens.id_order() {
        if j == i {
            continue;
        }
        let g = kernel.mollified_kernel_matrix(&(xi - ens.positions[j]), v_hat, band)?;
        acc += g * q[j];
    }
    Ok(acc / ens.len() as f64)
}

/// Coefficients, kernel and noise shared by every step of a particle run.
#[derive(Clone, Debug)]
pub struct ParticleDynamics {
    kernel: AlphaKernel,
    noise: NoiseModel,
    nu: f64,
    band: usize,
}

impl ParticleDynamics {
    /// Particle velocities are summed over the kernel grid's dealiasing band.
    pub fn new(kernel: AlphaKernel, noise: NoiseModel, nu: f64) -> Result<Self> {
        if !(nu >= 0.0 && nu.is_finite()) {
            return Err(Error::InvalidArgument(format!("viscosity must be >= 0, got {nu}")));
        }
        let band = kernel.grid().dealias_band();
        Ok(Self {
            kernel,
            noise,
            nu,
            band,
        })
    }

    #[inline]
    pub fn kernel(&self) -> &AlphaKernel {
        &self.kernel
    }

    #[inline]
    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    #[inline]
    pub fn nu(&self) -> f64 {
        self.nu
    }

    #[inline]
    pub fn band(&self) -> usize {
        self.band
    }

    /// Velocity and gradient at `positions` induced by particles at
    /// `positions` carrying `charges`, both in id order.
    fn velocities(&self, spec: &MollifierSpec, positions: &[Vector3<f64>], charges: &[Vector3<f64>]) -> Vec<PointValue> {
        let band = self.band;
        let s = fourier::deposit(band, positions, charges);
        let vhat = spec.cached_spectrum(band);
        let n = positions.len();
        let ev = Evaluator::new(band, |k| {
            let g = field_coefficient(&s, &vhat, n, k);
            let kf = k.map(|x| x as f64);
            cross_ik(kf, &g, self.kernel.multiplier_at(k))
        });
        ev.eval(positions)
    }
}

/// Brownian drivers for one particle run: the common `W^m` and the
/// per-particle `B^i` keyed on particle ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Drivers {
    common: Vec<BrownianDriver>,
    b_seed: u64,
    fine_dt: f64,
    factor: u64,
}

impl Drivers {
    pub fn new(noise: &NoiseModel, w_seed: u64, b_seed: u64, dt: f64) -> Result<Self> {
        let common = crate::noise::common_drivers(noise, w_seed, dt)?;
        Ok(Self {
            common,
            b_seed,
            fine_dt: dt,
            factor: 1,
        })
    }

    /// Same paths sampled with steps `factor` times longer.
    pub fn coarsened(&self, factor: u64) -> Self {
        Self {
            common: self.common.iter().map(|d| d.coarsened(factor)).collect(),
            factor: self.factor * factor.max(1),
            ..self.clone()
        }
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.fine_dt * self.factor as f64
    }

    #[inline]
    pub fn common(&self) -> &[BrownianDriver] {
        &self.common
    }

    pub fn particle(&self, id: u64) -> BrownianDriver {
        BrownianDriver::new(self.b_seed, StreamId::b(id), self.fine_dt)
            .expect("dt validated at construction")
            .coarsened(self.factor)
    }
}

/// One Heun predictor–corrector step of the Stratonovich system
/// `dX = u^N(X)dt + √(2ν)dB + Σ σ_m(X)∘dW^m`,
/// `dΦ = ∇u^N(X)Φ dt + Σ ∇σ_m(X)Φ∘dW^m`.
pub fn step(ens: &ParticleEnsemble, dynamics: &ParticleDynamics, drivers: &Drivers) -> Result<ParticleEnsemble> {
    let dt = drivers.dt();
    let n = ens.len();
    let noise = dynamics.noise();
    if drivers.common().len() != noise.len() {
        return Err(Error::InvalidArgument(format!(
            "{} common drivers for {} noise terms",
            drivers.common().len(),
            noise.len()
        )));
    }
    let order = ens.id_order();
    let x0: Vec<Vector3<f64>> = order.iter().map(|&i| ens.positions[i]).collect();
    let p0: Vec<Matrix3<f64>> = order.iter().map(|&i| ens.phi[i]).collect();
    let w: Vec<Vector3<f64>> = order.iter().map(|&i| ens.weights[i]).collect();
    let ids: Vec<u64> = order.iter().map(|&i| ens.ids[i]).collect();

    let dw: Vec<f64> = drivers.common().iter().map(|d| d.increment(ens.steps)).collect();
    let diffusion = (2.0 * dynamics.nu()).sqrt();
    let db: Vec<Vector3<f64>> = if diffusion > 0.0 {
        ids.iter()
            .map(|&id| drivers.particle(id).vector_increment(ens.steps) * diffusion)
            .collect()
    } else {
        vec![Vector3::zeros(); n]
    };

    // noise terms Σ_m σ_m(X)ΔW^m and Σ_m ∇σ_m(X)ΔW^m
    let noise_terms = |x: &Vector3<f64>| -> (Vector3<f64>, Matrix3<f64>) {
        let mut s = Vector3::zeros();
        let mut g = Matrix3::zeros();
        for (t, &d) in noise.terms().iter().zip(&dw) {
            let (v, gr) = t.eval_with_gradient(x);
            s += v * d;
            g += gr * d;
        }
        (s, g)
    };

    let q0: Vec<Vector3<f64>> = p0.iter().zip(&w).map(|(p, w)| p * w).collect();
    let stage1 = dynamics.velocities(&ens.spec, &x0, &q0);
    let mut x1 = Vec::with_capacity(n);
    let mut p1 = Vec::with_capacity(n);
    let mut k1x = Vec::with_capacity(n);
    let mut k1p = Vec::with_capacity(n);
    for i in 0..n {
        let (u, gu) = stage1[i];
        let (s, gs) = noise_terms(&x0[i]);
        let dx = u * dt + db[i] + s;
        let dp = gu * p0[i] * dt + gs * p0[i];
        x1.push(x0[i] + dx);
        p1.push(p0[i] + dp);
        k1x.push(u * dt + s);
        k1p.push(dp);
    }
    let q1: Vec<Vector3<f64>> = p1.iter().zip(&w).map(|(p, w)| p * w).collect();
    let stage2 = dynamics.velocities(&ens.spec, &x1, &q1);

    let mut next = ens.clone();
    for (j, &i) in order.iter().enumerate() {
        let (u, gu) = stage2[j];
        let (s, gs) = noise_terms(&x1[j]);
        let dx = 0.5 * (k1x[j] + u * dt + s) + db[j];
        let dp = 0.5 * (k1p[j] + gu * p1[j] * dt + gs * p1[j]);
        next.positions[i] = wrap_point(&(x0[j] + dx));
        next.phi[i] = p0[j] + dp;
    }
    next.steps = ens.steps + 1;
    next.t = next.steps as f64 * dt;
    let finite = next.positions.iter().all(|x| x.iter().all(|v| v.is_finite()))
        && next.phi.iter().all(|p| p.iter().all(|v| v.is_finite()));
    if !finite {
        return Err(Error::BlowUp {
            step: next.steps,
            time: next.t,
            what: "particle state is not finite".into(),
        });
    }
    Ok(next)
}

/// Step index of time `t` on a grid of spacing `dt`, if `t` lies on it.
pub fn step_index(t: f64, dt: f64) -> Option<u64> {
    let s = (t / dt).round();
    if s >= 0.0 && (s * dt - t).abs() <= 1e-9 * dt.max(t.abs()) {
        Some(s as u64)
    } else {
        None
    }
}

/// Snapshot times converted to sorted, deduplicated step indices.
pub fn snapshot_steps(times: &[f64], dt: f64) -> Result<Vec<u64>> {
    let mut steps = times
        .iter()
        .map(|&t| {
            step_index(t, dt).ok_or_else(|| {
                Error::InvalidArgument(format!("snapshot time {t} is not on the step grid (dt = {dt})"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    steps.sort_unstable();
    steps.dedup();
    Ok(steps)
}

/// Particle trajectory output.
#[derive(Clone, Debug)]
pub struct ParticleRun {
    pub snapshots: Vec<(f64, SpectralField)>,
    pub ensemble: ParticleEnsemble,
}

/// Advance `ens` to `t_final`, recording `g^N` on `grid` at each snapshot
/// time.
pub fn run(
    ens: &ParticleEnsemble,
    t_final: f64,
    dynamics: &ParticleDynamics,
    drivers: &Drivers,
    snapshot_times: &[f64],
    grid: GridSpec,
) -> Result<ParticleRun> {
    let dt = drivers.dt();
    let total = step_index(t_final, dt)
        .ok_or_else(|| Error::InvalidArgument(format!("final time {t_final} is not a multiple of dt = {dt}")))?;
    let wanted = snapshot_steps(snapshot_times, dt)?;
    if wanted.last().is_some_and(|&s| s > total) {
        return Err(Error::InvalidArgument("snapshot after the final time".into()));
    }
    let mut snapshots = Vec::with_capacity(wanted.len());
    let mut cur = ens.clone();
    let mut next_snap = wanted.iter().peekable();
    loop {
        if next_snap.peek().is_some_and(|&&s| s == cur.steps) {
            snapshots.push((cur.steps as f64 * dt, empirical_field(&cur, grid)?));
            next_snap.next();
        }
        if cur.steps >= total {
            break;
        }
        cur = step(&cur, dynamics, drivers)?;
        if cur.steps % 100 == 0 {
            debug!("particles: step {} of {}, max |det Φ − 1| = {:.3e}", cur.steps, total, cur.max_det_defect());
        }
    }
    Ok(ParticleRun {
        snapshots,
        ensemble: cur,
    })
}

/// `(1/N) Σ_i f(X^i) Φ^i w^i` for a scalar test function.
pub fn pairing(ens: &ParticleEnsemble, f: impl Fn(&Vector3<f64>) -> f64) -> Vector3<f64> {
    let q = ens.charges();
    let mut acc = Vector3::zeros();
    for i in ens.id_order() {
        acc += q[i] * f(&ens.positions[i]);
    }
    acc / ens.len().max(1) as f64
}
