//! The convergence sweep, plain simulation runs and the flow-map comparison.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Norm};
use super::table::{ErrorRow, ErrorTable, NORM_NOTE};
use crate::error::{Error, Result};
use crate::flowmap::{self, FlowConfig, FlowRow, VelocityHistory};
use crate::kernel::AlphaKernel;
use crate::noise::{common_drivers, BrownianDriver};
use crate::particles::{self, Drivers, ParticleDynamics, ParticleRun};
use crate::solver::SpectralSolver;
use crate::spectral::snapshot::write_snapshots;
use crate::spectral::SpectralField;

/// `‖g − ω‖` in the requested norm.
pub fn error_norm(g: &SpectralField, omega: &SpectralField, norm: Norm) -> Result<f64> {
    g.ensure_same_grid(omega)?;
    let diff = g - omega;
    Ok(match norm {
        Norm::Sobolev(s) => diff.sobolev_norm(s),
        Norm::L2 => diff.l2_norm(),
        Norm::Sup => diff.to_physical().sup_norm(),
    })
}

/// `(max, argmax)` of `‖g_t − ω_t‖` over paired snapshots.
fn sup_in_time(g: &[(f64, SpectralField)], omega: &[(f64, SpectralField)], norm: Norm) -> Result<(f64, f64)> {
    if g.len() != omega.len() {
        return Err(Error::InvalidArgument(format!(
            "{} particle snapshots against {} solver snapshots",
            g.len(),
            omega.len()
        )));
    }
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for ((t, a), (_, b)) in g.iter().zip(omega) {
        let e = error_norm(a, b, norm)?;
        if e.is_nan() {
            return Err(Error::InvalidArgument(format!("error is NaN at t = {t}")));
        }
        if e > best.0 {
            best = (e, *t);
        }
    }
    Ok(best)
}

/// Seeds actually used by a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub master: u64,
    pub w: u64,
    pub b_base: u64,
}

impl RunSeeds {
    pub fn of(config: &ExperimentConfig) -> Self {
        Self {
            master: config.seeds.master,
            w: config.seeds.w_seed(),
            b_base: config.seeds.b_seed(),
        }
    }
}

fn log_streams(who: &str, drivers: &[BrownianDriver]) {
    for d in drivers {
        info!("{who}: common noise seed {} stream {:?}", d.seed(), d.stream());
    }
}

fn reference_run(config: &ExperimentConfig, omega0: &SpectralField) -> Result<Vec<(f64, SpectralField)>> {
    let solver = SpectralSolver::new(config.solver_config()?)?;
    let drivers = common_drivers(&solver.config().noise, RunSeeds::of(config).w, config.dt)?;
    log_streams("solver", &drivers);
    Ok(solver.solve(omega0, config.t_final, &drivers, &config.snapshot_times)?.snapshots)
}

fn particle_run(config: &ExperimentConfig, omega0: &SpectralField, side: usize) -> Result<ParticleRun> {
    let grid = config.grid_spec()?;
    let noise = config.noise_model()?;
    let seeds = RunSeeds::of(config);
    let ens = particles::init_lattice(omega0, side, config.beta)?;
    let dynamics = ParticleDynamics::new(AlphaKernel::new(config.alpha, grid)?, noise.clone(), config.nu)?;
    let drivers = Drivers::new(&noise, seeds.w, seeds.b_base, config.dt)?;
    log_streams(&format!("particles N = {}", ens.len()), drivers.common());
    particles::run(&ens, config.t_final, &dynamics, &drivers, &config.snapshot_times, grid)
}

/// Sweep the lattice sides, pairing each particle run with the spectral
/// solution driven by the same `W`. A failing sub-run yields failed rows and
/// the sweep continues.
pub fn run_convergence(config: &ExperimentConfig) -> Result<ErrorTable> {
    let config = config.clone().validated()?;
    let norms = config.norm_list()?;
    let omega0 = config.initial_vorticity()?;
    let hash = config.hash()?;
    let master = config.seeds.master;
    let reference = reference_run(&config, &omega0).map_err(|e| e.to_string());
    if let Err(e) = &reference {
        warn!("reference solver failed: {e}");
    }
    let per_side: Vec<Vec<ErrorRow>> = config
        .lattice_sides
        .par_iter()
        .map(|&side| {
            let n = side * side * side;
            let start = Instant::now();
            let outcome = reference.clone().and_then(|omega| {
                let run = particle_run(&config, &omega0, side).map_err(|e| e.to_string())?;
                norms
                    .iter()
                    .map(|&norm| sup_in_time(&run.snapshots, &omega, norm).map_err(|e| e.to_string()))
                    .collect::<std::result::Result<Vec<_>, String>>()
            });
            let wall_ms = start.elapsed().as_millis() as u64;
            if let Err(e) = &outcome {
                warn!("N = {n} failed: {e}");
            }
            norms
                .iter()
                .enumerate()
                .map(|(i, norm)| {
                    let (sup_error, t_of_sup, failure) = match &outcome {
                        Ok(v) => (Some(v[i].0), Some(v[i].1), None),
                        Err(e) => (None, None, Some(e.clone())),
                    };
                    ErrorRow {
                        n,
                        beta: config.beta,
                        norm: norm.id(),
                        sup_error,
                        t_of_sup,
                        wall_ms,
                        seed_master: master,
                        config_hash: hash.clone(),
                        failure,
                    }
                })
                .collect()
        })
        .collect();
    Ok(ErrorTable {
        note: NORM_NOTE.into(),
        rows: per_side.into_iter().flatten().collect(),
    })
}

/// Metadata written next to every binary snapshot file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSidecar {
    pub source: String,
    pub times: Vec<f64>,
    /// Particle count, 0 for the solver.
    #[serde(rename = "N")]
    pub n: usize,
    pub beta: f64,
    pub grid: usize,
    pub seeds: RunSeeds,
    pub config_hash: String,
}

/// Solver and particle snapshots of one configuration.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub solver: Vec<(f64, SpectralField)>,
    /// `(N, run)` per lattice side; failures are kept as messages.
    pub particles: Vec<(usize, std::result::Result<ParticleRun, String>)>,
}

pub fn simulate(config: &ExperimentConfig) -> Result<Simulation> {
    let config = config.clone().validated()?;
    let omega0 = config.initial_vorticity()?;
    let solver = reference_run(&config, &omega0)?;
    let particles = config
        .lattice_sides
        .par_iter()
        .map(|&side| {
            (
                side * side * side,
                particle_run(&config, &omega0, side).map_err(|e| e.to_string()),
            )
        })
        .collect();
    Ok(Simulation { solver, particles })
}

/// Write `<stem>.nsa` with the fields in physical space and `<stem>.json`
/// with the sidecar.
pub fn write_snapshot_set(
    dir: &Path,
    stem: &str,
    snapshots: &[(f64, SpectralField)],
    sidecar: &SnapshotSidecar,
) -> Result<()> {
    let fields: Vec<_> = snapshots.iter().map(|(_, f)| f.to_physical()).collect();
    let mut bin = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}.nsa")))?);
    write_snapshots(&mut bin, &fields)?;
    bin.flush()?;
    let side = std::fs::File::create(dir.join(format!("{stem}.json")))?;
    serde_json::to_writer_pretty(side, sidecar)?;
    Ok(())
}

impl Simulation {
    /// Emit every snapshot set of the run into `dir`.
    pub fn write(&self, dir: &Path, config: &ExperimentConfig) -> Result<()> {
        let seeds = RunSeeds::of(config);
        let hash = config.hash()?;
        let sidecar = |source: &str, n: usize, snaps: &[(f64, SpectralField)]| SnapshotSidecar {
            source: source.into(),
            times: snaps.iter().map(|(t, _)| *t).collect(),
            n,
            beta: config.beta,
            grid: config.grid,
            seeds,
            config_hash: hash.clone(),
        };
        write_snapshot_set(dir, "solver", &self.solver, &sidecar("solver", 0, &self.solver))?;
        for (n, run) in &self.particles {
            match run {
                Ok(run) => write_snapshot_set(
                    dir,
                    &format!("particles_N{n}"),
                    &run.snapshots,
                    &sidecar("particles", *n, &run.snapshots),
                )?,
                Err(e) => warn!("N = {n} produced no snapshots: {e}"),
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FlowReport {
    pub rows: Vec<FlowRow>,
    /// `max |det J − 1|` over labels and replicas at the final time.
    pub max_det_defect: f64,
}

impl FlowReport {
    pub fn max_z(&self, t: f64) -> f64 {
        self.rows
            .iter()
            .filter(|r| (r.t - t).abs() <= 1e-12)
            .map(|r| r.z)
            .fold(0.0, f64::max)
    }
}

/// Lagrangian flow estimates of `⟨ω_T, e_k⟩` against the solver at `t = 0`
/// and `t = flowmap.t_final`.
pub fn run_flowmap(config: &ExperimentConfig) -> Result<FlowReport> {
    let config = config.clone().validated()?;
    let seeds = RunSeeds::of(&config);
    let omega0 = config.initial_vorticity()?.dealiased();
    let noise = config.noise_model()?;
    let solver = SpectralSolver::new(config.solver_config()?)?;
    let drivers = common_drivers(&noise, seeds.w, config.dt)?;
    log_streams("flowmap", &drivers);
    let t_final = config.flowmap.t_final;
    let times = if t_final > 0.0 { vec![0.0, t_final] } else { vec![0.0] };
    let mut history = VelocityHistory::new();
    let traj = solver.solve_observed(&omega0, t_final, &drivers, &times, |s| {
        history.push(s.t, &s.omega, solver.kernel())
    })?;
    let flow = FlowConfig {
        labels_per_axis: config.flowmap.labels_per_axis,
        replicas: config.flowmap.replicas,
        nu: config.nu,
        dt: config.dt,
        b_seed: seeds.b_base,
        noise,
    };
    let ens = flowmap::evolve_flow(&history, &flow, &drivers, &times)?;
    let modes = flowmap::modes_in_band(config.flowmap.band as i64);
    let rows = flowmap::compare_to_solver(&ens, &omega0, &traj.snapshots, &modes, &times)?;
    Ok(FlowReport {
        rows,
        max_det_defect: ens.max_det_defect(t_final)?,
    })
}
