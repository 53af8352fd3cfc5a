//! Monte Carlo check of the Lagrangian representation: integrate the
//! stochastic flow `dX = u dt + √(2ν)dB + Σ σ_m(X)∘dW^m` and its Jacobian
//! `dJ = ∇u(X)J dt + Σ ∇σ_m(X)J∘dW^m` from a lattice of labels, driven by a
//! solver velocity, and estimate `⟨ω_t, e_k⟩` as the replica mean of
//! `(1/L³) Σ_x J ω₀(x) e^{−ik·X(x,t)}`.

use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::AlphaKernel;
use crate::noise::{BrownianDriver, NoiseModel, StreamId};
use crate::particles::{evaluate_at, snapshot_steps, Evaluator, PointValue};
use crate::spectral::{wrap_point, CVec3, SpectralField, DOMAIN_LENGTH};

/// Velocity fields at increasing times, held as point evaluators and
/// interpolated linearly in between.
#[derive(Clone, Debug, Default)]
pub struct VelocityHistory {
    times: Vec<f64>,
    fields: Vec<Evaluator>,
}

impl VelocityHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append `u = K_α ⋆ ω` at time `t`, which must exceed the last time.
    pub fn push(&mut self, t: f64, omega: &SpectralField, kernel: &AlphaKernel) -> Result<()> {
        if self.times.last().is_some_and(|&last| t <= last) {
            return Err(Error::InvalidArgument(format!("velocity time {t} is not increasing")));
        }
        let u = kernel.velocity_from_vorticity(omega)?;
        let band = u.support_band();
        let limit = u.grid().modes() / 2 - 1;
        if band > limit {
            return Err(Error::BandTooLarge { band, limit });
        }
        self.fields.push(Evaluator::new(band, |k| u.get(k).expect("band inside grid")));
        self.times.push(t);
        Ok(())
    }

    pub fn from_snapshots(snapshots: &[(f64, SpectralField)], kernel: &AlphaKernel) -> Result<Self> {
        let mut h = Self::new();
        for (t, w) in snapshots {
            h.push(*t, w, kernel)?;
        }
        Ok(h)
    }

    #[inline]
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Largest gap between consecutive times.
    pub fn max_spacing(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// `(u, ∇u)` at `points` and time `t`.
    pub fn eval(&self, t: f64, points: &[Vector3<f64>]) -> Result<Vec<PointValue>> {
        let (first, last) = match (self.times.first(), self.times.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::InvalidArgument("empty velocity history".into())),
        };
        let tol = 1e-9 * (last - first).abs().max(1.0);
        if t < first - tol || t > last + tol {
            return Err(Error::InvalidArgument(format!("time {t} outside [{first}, {last}]")));
        }
        let j = self.times.partition_point(|&s| s < t - tol);
        let j = j.min(self.times.len() - 1);
        if (self.times[j] - t).abs() <= tol {
            return Ok(self.fields[j].eval(points));
        }
        let (ta, tb) = (self.times[j - 1], self.times[j]);
        let theta = (t - ta) / (tb - ta);
        let a = self.fields[j - 1].eval(points);
        let b = self.fields[j].eval(points);
        Ok(a
            .into_iter()
            .zip(b)
            .map(|((ua, ga), (ub, gb))| (ua * (1.0 - theta) + ub * theta, ga * (1.0 - theta) + gb * theta))
            .collect())
    }
}

#[derive(Clone, Debug)]
pub struct FlowConfig {
    pub labels_per_axis: usize,
    pub replicas: usize,
    pub nu: f64,
    pub dt: f64,
    pub b_seed: u64,
    pub noise: NoiseModel,
}

/// Positions and Jacobians of every (replica, label) pair at one time,
/// replica-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowRecord {
    pub t: f64,
    pub positions: Vec<Vector3<f64>>,
    pub jacobians: Vec<Matrix3<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowEnsemble {
    labels: Vec<Vector3<f64>>,
    replica_ids: Vec<u64>,
    records: Vec<FlowRecord>,
}

impl FlowEnsemble {
    #[inline]
    pub fn labels(&self) -> &[Vector3<f64>] {
        &self.labels
    }

    #[inline]
    pub fn replicas(&self) -> usize {
        self.replica_ids.len()
    }

    #[inline]
    pub fn replica_ids(&self) -> &[u64] {
        &self.replica_ids
    }

    #[inline]
    pub fn records(&self) -> &[FlowRecord] {
        &self.records
    }

    pub fn record_at(&self, t: f64) -> Result<&FlowRecord> {
        self.records
            .iter()
            .find(|r| (r.t - t).abs() <= 1e-9 * t.abs().max(1.0))
            .ok_or_else(|| Error::InvalidArgument(format!("no flow record at t = {t}")))
    }

    /// `max |det J − 1|` over replicas and labels at time `t`.
    pub fn max_det_defect(&self, t: f64) -> Result<f64> {
        Ok(self
            .record_at(t)?
            .jacobians
            .iter()
            .map(|j| (j.determinant() - 1.0).abs())
            .fold(0.0, f64::max))
    }

    /// Same ensemble with replica `perm[j]` moved to slot `j`.
    pub fn permuted_replicas(&self, perm: &[usize]) -> Self {
        let l = self.labels.len();
        let shuffle = |r: &FlowRecord| FlowRecord {
            t: r.t,
            positions: perm.iter().flat_map(|&p| r.positions[p * l..(p + 1) * l].iter().copied()).collect(),
            jacobians: perm.iter().flat_map(|&p| r.jacobians[p * l..(p + 1) * l].iter().copied()).collect(),
        };
        Self {
            labels: self.labels.clone(),
            replica_ids: perm.iter().map(|&p| self.replica_ids[p]).collect(),
            records: self.records.iter().map(shuffle).collect(),
        }
    }
}

/// Cell centres of an `L³` lattice, x fastest.
pub fn lattice_labels(side: usize) -> Vec<Vector3<f64>> {
    let h = DOMAIN_LENGTH / side as f64;
    (0..side.pow(3))
        .map(|i| {
            let a = i % side;
            let b = (i / side) % side;
            let c = i / (side * side);
            Vector3::new(a as f64 + 0.5, b as f64 + 0.5, c as f64 + 0.5) * h
        })
        .collect()
}

/// Heun integration of positions and Jacobians for every replica, recording
/// the state at `record_times`. Replica `r` and label `l` draw `B` from
/// stream `r·L³ + l`.
pub fn evolve_flow(
    history: &VelocityHistory,
    config: &FlowConfig,
    w_drivers: &[BrownianDriver],
    record_times: &[f64],
) -> Result<FlowEnsemble> {
    let dt = config.dt;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if config.labels_per_axis < 1 || config.replicas < 1 {
        return Err(Error::InvalidArgument("need at least one label and one replica".into()));
    }
    if w_drivers.len() != config.noise.len() {
        return Err(Error::InvalidArgument(format!(
            "{} drivers for {} noise terms",
            w_drivers.len(),
            config.noise.len()
        )));
    }
    if let Some(d) = w_drivers.iter().find(|d| (d.dt() - dt).abs() > 1e-12 * dt) {
        return Err(Error::InvalidArgument(format!("driver dt {} differs from flow dt {dt}", d.dt())));
    }
    if history.max_spacing() > 4.0 * dt * (1.0 + 1e-9) {
        return Err(Error::InvalidArgument(format!(
            "velocity snapshots {} apart exceed 4·dt = {}",
            history.max_spacing(),
            4.0 * dt
        )));
    }
    let steps = snapshot_steps(record_times, dt)?;
    let total = steps.last().copied().unwrap_or(0);
    let labels = lattice_labels(config.labels_per_axis);
    let l = labels.len();
    let r = config.replicas;
    let n = l * r;
    let diffusion = (2.0 * config.nu).sqrt();
    let noise = &config.noise;

    let mut x: Vec<Vector3<f64>> = (0..r).flat_map(|_| labels.iter().copied()).collect();
    let mut jac = vec![Matrix3::identity(); n];
    let mut records = Vec::with_capacity(steps.len());
    let mut wanted = steps.iter().peekable();
    for step in 0..=total {
        if wanted.peek().is_some_and(|&&s| s == step) {
            records.push(FlowRecord {
                t: step as f64 * dt,
                positions: x.clone(),
                jacobians: jac.clone(),
            });
            wanted.next();
        }
        if step == total {
            break;
        }
        let t0 = step as f64 * dt;
        let dw: Vec<f64> = w_drivers.iter().map(|d| d.increment(step)).collect();
        let db: Vec<Vector3<f64>> = if diffusion > 0.0 {
            (0..n as u64)
                .map(|id| {
                    BrownianDriver::new(config.b_seed, StreamId::b(id), dt)
                        .expect("dt checked above")
                        .vector_increment(step)
                        * diffusion
                })
                .collect()
        } else {
            vec![Vector3::zeros(); n]
        };
        let noise_terms = |p: &Vector3<f64>| -> (Vector3<f64>, Matrix3<f64>) {
            let mut s = Vector3::zeros();
            let mut g = Matrix3::zeros();
            for (term, &d) in noise.terms().iter().zip(&dw) {
                let (v, gr) = term.eval_with_gradient(p);
                s += v * d;
                g += gr * d;
            }
            (s, g)
        };
        let stage1 = history.eval(t0, &x)?;
        let mut x1 = Vec::with_capacity(n);
        let mut j1 = Vec::with_capacity(n);
        let mut k1x = Vec::with_capacity(n);
        let mut k1j = Vec::with_capacity(n);
        for i in 0..n {
            let (u, gu) = stage1[i];
            let (s, gs) = noise_terms(&x[i]);
            let dj = gu * jac[i] * dt + gs * jac[i];
            x1.push(x[i] + u * dt + s + db[i]);
            j1.push(jac[i] + dj);
            k1x.push(u * dt + s);
            k1j.push(dj);
        }
        let stage2 = history.eval(t0 + dt, &x1)?;
        for i in 0..n {
            let (u, gu) = stage2[i];
            let (s, gs) = noise_terms(&x1[i]);
            x[i] = wrap_point(&(x[i] + 0.5 * (k1x[i] + u * dt + s) + db[i]));
            jac[i] += 0.5 * (k1j[i] + gu * j1[i] * dt + gs * j1[i]);
        }
        let finite = x.iter().all(|p| p.iter().all(|v| v.is_finite()))
            && jac.iter().all(|m| m.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::BlowUp {
                step: step + 1,
                time: t0 + dt,
                what: "flow map state is not finite".into(),
            });
        }
    }
    Ok(FlowEnsemble {
        labels,
        replica_ids: (0..r as u64).collect(),
        records,
    })
}

/// Replica mean of `⟨ω_t, e_k⟩` and its per-component standard error.
#[derive(Clone, Debug, PartialEq)]
pub struct PairingEstimate {
    pub estimate: CVec3,
    pub stderr: [f64; 3],
}

/// Estimate of the Fourier coefficient of `ω_t` at `k` (normalized as in
/// the spectral fields) from the flow at time `t`.
pub fn weak_pairing(ens: &FlowEnsemble, omega0: &SpectralField, k: [i64; 3], t: f64) -> Result<PairingEstimate> {
    let r = ens.replicas();
    if r < 2 {
        return Err(Error::InvalidArgument(format!("{r} replicas give no variance estimate; need at least 2")));
    }
    let rec = ens.record_at(t)?;
    let w0: Vec<Vector3<f64>> = evaluate_at(omega0, ens.labels())?.into_iter().map(|(v, _)| v).collect();
    let l = ens.labels.len();
    let kf = Vector3::new(k[0] as f64, k[1] as f64, k[2] as f64);
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_unstable_by_key(|&i| ens.replica_ids[i]);
    let per_replica: Vec<CVec3> = order
        .iter()
        .map(|&rep| {
            let mut acc = [Complex64::default(); 3];
            for (i, w) in w0.iter().enumerate() {
                let idx = rep * l + i;
                let v = rec.jacobians[idx] * w;
                let e = Complex64::from_polar(1.0, -kf.dot(&rec.positions[idx]));
                for c in 0..3 {
                    acc[c] += e * v[c];
                }
            }
            acc.map(|z| z / l as f64)
        })
        .collect();
    let mut estimate = [Complex64::default(); 3];
    for y in &per_replica {
        for c in 0..3 {
            estimate[c] += y[c];
        }
    }
    let estimate = estimate.map(|z| z / r as f64);
    let mut stderr = [0.0; 3];
    for (c, se) in stderr.iter_mut().enumerate() {
        let var = per_replica.iter().map(|y| (y[c] - estimate[c]).norm_sqr()).sum::<f64>() / (r - 1) as f64;
        *se = (var / r as f64).sqrt();
    }
    Ok(PairingEstimate { estimate, stderr })
}

/// One line of the flow-map report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowRow {
    pub k1: i64,
    pub k2: i64,
    pub k3: i64,
    pub t: f64,
    pub component: usize,
    pub estimate_re: f64,
    pub estimate_im: f64,
    pub solver_re: f64,
    pub solver_im: f64,
    pub stderr: f64,
    pub z: f64,
}

/// `|estimate − solver| / stderr`, with the error floored at `1e−12·scale`
/// so deterministic rows do not divide round-off by zero.
pub fn z_score(estimate: Complex64, solver: Complex64, stderr: f64, scale: f64) -> f64 {
    let gap = (estimate - solver).norm();
    let floor = 1e-12 * scale;
    if gap == 0.0 {
        0.0
    } else if stderr.max(floor) == 0.0 {
        f64::INFINITY
    } else {
        gap / stderr.max(floor)
    }
}

/// Tabulate estimates against the solver for every mode, time and
/// component. `solver` must hold a snapshot at each of `times`.
pub fn compare_to_solver(
    ens: &FlowEnsemble,
    omega0: &SpectralField,
    solver: &[(f64, SpectralField)],
    modes: &[[i64; 3]],
    times: &[f64],
) -> Result<Vec<FlowRow>> {
    let mut rows = Vec::with_capacity(modes.len() * times.len() * 3);
    for &t in times {
        let (_, field) = solver
            .iter()
            .find(|(s, _)| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
            .ok_or_else(|| Error::InvalidArgument(format!("no solver snapshot at t = {t}")))?;
        for &k in modes {
            let exact = field
                .get(k)
                .ok_or_else(|| Error::InvalidArgument(format!("mode {k:?} is outside the solver grid")))?;
            let est = weak_pairing(ens, omega0, k, t)?;
            let scale = (0..3)
                .map(|c| est.estimate[c].norm().max(exact[c].norm()))
                .fold(0.0, f64::max);
            for c in 0..3 {
                rows.push(FlowRow {
                    k1: k[0],
                    k2: k[1],
                    k3: k[2],
                    t,
                    component: c,
                    estimate_re: est.estimate[c].re,
                    estimate_im: est.estimate[c].im,
                    solver_re: exact[c].re,
                    solver_im: exact[c].im,
                    stderr: est.stderr[c],
                    z: z_score(est.estimate[c], exact[c], est.stderr[c], scale),
                });
            }
        }
    }
    Ok(rows)
}

/// All modes with `max_j |k_j| <= band`.
pub fn modes_in_band(band: i64) -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    for k3 in -band..=band {
        for k2 in -band..=band {
            for k1 in -band..=band {
                out.push([k1, k2, k3]);
            }
        }
    }
    out
}

pub fn write_csv<W: Write>(rows: &[FlowRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record([
        "k1",
        "k2",
        "k3",
        "t",
        "component",
        "estimate_re",
        "estimate_im",
        "solver_re",
        "solver_im",
        "stderr",
        "z",
    ])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
