//! Experiment configuration: a single TOML file, every key optional.

use std::fmt;
use std::path::Path;

use log::warn;
use nalgebra::Vector3;
use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mollifier::beta_bound_check;
use crate::noise::{NoiseModel, SigmaField, SigmaSpec};
use crate::particles::step_index;
use crate::solver::{Diffusion, SolverConfig, Stretching};
use crate::spectral::{GridSpec, PhysicalField, SpectralField};

/// Initial conditions available without listing coefficients.
pub const PRESETS: [&str; 4] = ["taylor_green", "shear", "abc", "zero"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Grid size `M` per axis.
    pub grid: usize,
    /// Kernel smoothing length.
    pub alpha: f64,
    pub nu: f64,
    pub p: f64,
    pub alpha_sobolev: f64,
    /// Sobolev index of the surrogate norm `H^η_2`.
    pub eta: f64,
    pub beta: f64,
    pub t_final: f64,
    pub dt: f64,
    pub snapshot_times: Vec<f64>,
    /// Lattice sides `n`; each run has `N = n³` particles.
    pub lattice_sides: Vec<usize>,
    pub norms: Vec<NormSpec>,
    pub initial_condition: String,
    pub noise: Vec<SigmaSpec>,
    pub seeds: Seeds,
    pub solver: SolverOptions,
    pub flowmap: FlowmapOptions,
    /// Named initial fields given by their Fourier coefficients.
    pub fields: Vec<NamedField>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            grid: 32,
            alpha: 0.5,
            nu: 0.05,
            p: 7.0,
            alpha_sobolev: 0.9,
            eta: 0.88,
            beta: 0.25,
            t_final: 0.5,
            dt: 1e-3,
            snapshot_times: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            lattice_sides: vec![8, 12, 16],
            norms: vec![NormSpec::Index(-1.0), NormSpec::Name("L2".into()), NormSpec::Name("sup".into())],
            initial_condition: "taylor_green".into(),
            noise: Vec::new(),
            seeds: Seeds::default(),
            solver: SolverOptions::default(),
            flowmap: FlowmapOptions::default(),
            fields: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub master: u64,
    /// Common-noise seed; derived from `master` when absent.
    pub w: Option<u64>,
    /// Seed of the per-particle motions; derived from `master` when absent.
    pub b_base: Option<u64>,
}

impl Seeds {
    fn derived(&self) -> (u64, u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        let w = rng.next_u64();
        let b = rng.next_u64();
        (self.w.unwrap_or(w), self.b_base.unwrap_or(b))
    }

    pub fn w_seed(&self) -> u64 {
        self.derived().0
    }

    pub fn b_seed(&self) -> u64 {
        self.derived().1
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub stretching: Stretching,
    pub diffusion: Diffusion,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowmapOptions {
    pub labels_per_axis: usize,
    pub replicas: usize,
    pub t_final: f64,
    /// Compare every mode with `max_j |k_j| <= band`.
    pub band: usize,
}

impl Default for FlowmapOptions {
    fn default() -> Self {
        Self {
            labels_per_axis: 8,
            replicas: 64,
            t_final: 0.25,
            band: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedField {
    pub name: String,
    pub modes: Vec<ModeCoefficient>,
}

/// `c_k`; the conjugate mode `−k` is filled in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeCoefficient {
    pub k: [i64; 3],
    pub re: [f64; 3],
    #[serde(default)]
    pub im: [f64; 3],
}

/// A norm as written in the file: a Sobolev index or `"L2"` / `"sup"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NormSpec {
    Index(f64),
    Name(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Norm {
    /// `H^s_2`.
    Sobolev(f64),
    L2,
    /// Maximum over grid nodes of the Euclidean norm.
    Sup,
}

impl Norm {
    pub fn id(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Norm::Sobolev(s) => write!(f, "H^{s}"),
            Norm::L2 => f.write_str("L2"),
            Norm::Sup => f.write_str("sup"),
        }
    }
}

impl TryFrom<&NormSpec> for Norm {
    type Error = String;

    fn try_from(spec: &NormSpec) -> std::result::Result<Self, String> {
        match spec {
            NormSpec::Index(s) if s.is_finite() => Ok(Norm::Sobolev(*s)),
            NormSpec::Index(s) => Err(format!("norm index must be finite, got {s}")),
            NormSpec::Name(n) if n.eq_ignore_ascii_case("l2") => Ok(Norm::L2),
            NormSpec::Name(n) if n.eq_ignore_ascii_case("sup") => Ok(Norm::Sup),
            NormSpec::Name(n) => Err(format!("unknown norm `{n}` (expected a number, \"L2\" or \"sup\")")),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Parse and validate, reporting unknown keys and every violated
    /// constraint together.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut unknown = Vec::new();
        let parsed: std::result::Result<Self, _> =
            serde_ignored::deserialize(toml::Deserializer::new(text), |path| unknown.push(path.to_string()));
        let mut problems: Vec<String> = unknown.iter().map(|k| format!("unknown key `{k}`")).collect();
        match parsed {
            Ok(cfg) => {
                problems.extend(cfg.violations());
                if problems.is_empty() {
                    cfg.warn_outside_regime();
                    Ok(cfg)
                } else {
                    Err(Error::Config(problems))
                }
            }
            Err(e) => {
                problems.push(e.to_string().trim().to_string());
                Err(Error::Config(problems))
            }
        }
    }

    pub fn validated(self) -> Result<Self> {
        let problems = self.violations();
        if problems.is_empty() {
            Ok(self)
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Every constraint the configuration breaks.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let Err(e) = GridSpec::new(self.grid) {
            v.push(format!("grid: {e}"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            v.push(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            v.push(format!("nu must be non-negative, got {}", self.nu));
        }
        let bound = beta_bound_check(self.p, self.alpha_sobolev, self.beta);
        if !(self.beta > 0.0 && self.beta < bound.bound && bound.bound.is_finite() && bound.bound > 0.0) {
            v.push(format!(
                "beta must be in (0, 1/(3+α−6/p)) = (0, {:.6}); got {} (slack {:.6})",
                bound.bound, self.beta, bound.beta_slack
            ));
        }
        let dt_ok = self.dt > 0.0 && self.dt.is_finite();
        if !dt_ok {
            v.push(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            v.push(format!("t_final must be non-negative, got {}", self.t_final));
        } else if dt_ok && step_index(self.t_final, self.dt).is_none() {
            v.push(format!("t_final = {} is not a multiple of dt = {}", self.t_final, self.dt));
        }
        if self.snapshot_times.is_empty() {
            v.push("snapshot_times must not be empty".into());
        }
        for &t in &self.snapshot_times {
            if !(0.0..=self.t_final).contains(&t) {
                v.push(format!("snapshot time {t} is outside [0, t_final]"));
            } else if dt_ok && step_index(t, self.dt).is_none() {
                v.push(format!("snapshot time {t} is not on the step grid (dt = {})", self.dt));
            }
        }
        if self.lattice_sides.is_empty() {
            v.push("lattice_sides must not be empty".into());
        }
        if self.lattice_sides.contains(&0) {
            v.push("lattice sides must be positive".into());
        }
        if self.norms.is_empty() {
            v.push("norms must not be empty".into());
        }
        for n in &self.norms {
            if let Err(e) = Norm::try_from(n) {
                v.push(e);
            }
        }
        for (m, spec) in self.noise.iter().enumerate() {
            if let Err(e) = SigmaField::try_from(spec) {
                v.push(format!("noise[{m}]: {e}"));
            }
        }
        v.extend(self.field_violations());
        let fm = &self.flowmap;
        if fm.labels_per_axis == 0 {
            v.push("flowmap.labels_per_axis must be positive".into());
        }
        if fm.replicas < 2 {
            v.push(format!("flowmap.replicas must be at least 2, got {}", fm.replicas));
        }
        if !(fm.t_final >= 0.0 && fm.t_final.is_finite()) || (dt_ok && step_index(fm.t_final, self.dt).is_none()) {
            v.push(format!("flowmap.t_final = {} must be a non-negative multiple of dt", fm.t_final));
        }
        if let Ok(g) = GridSpec::new(self.grid) {
            if fm.band > g.dealias_band() {
                v.push(format!(
                    "flowmap.band = {} exceeds the dealiased band {} of the grid",
                    fm.band,
                    g.dealias_band()
                ));
            }
        }
        v
    }

    fn field_violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (i, f) in self.fields.iter().enumerate() {
            if PRESETS.contains(&f.name.as_str()) {
                v.push(format!("fields[{i}]: name `{}` shadows a preset", f.name));
            }
            if self.fields[..i].iter().any(|g| g.name == f.name) {
                v.push(format!("fields[{i}]: duplicate name `{}`", f.name));
            }
        }
        let known = PRESETS.contains(&self.initial_condition.as_str())
            || self.fields.iter().any(|f| f.name == self.initial_condition);
        if !known {
            v.push(format!(
                "initial_condition `{}` is neither a preset ({}) nor a listed field",
                self.initial_condition,
                PRESETS.join(", ")
            ));
        } else if GridSpec::new(self.grid).is_ok() {
            match self.initial_vorticity() {
                Ok(w) => {
                    let defect = w.divergence_defect();
                    if defect > 1e-12 * w.max_abs().max(1.0) {
                        v.push(format!(
                            "initial condition `{}` is not divergence-free (max |k·ω̂_k| = {defect:.3e})",
                            self.initial_condition
                        ));
                    }
                }
                Err(e) => v.push(format!("initial condition `{}`: {e}", self.initial_condition)),
            }
        }
        v
    }

    fn warn_outside_regime(&self) {
        let b = beta_bound_check(self.p, self.alpha_sobolev, self.beta);
        if b.p_slack <= 0.0 || b.alpha_slack <= 0.0 {
            warn!(
                "p = {}, alpha_sobolev = {} lie outside p > 6, 6/p < alpha_sobolev < 1",
                self.p, self.alpha_sobolev
            );
        }
        if !(self.eta > 6.0 / self.p && self.eta < self.alpha_sobolev) {
            warn!("eta = {} lies outside (6/p, alpha_sobolev)", self.eta);
        }
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid)
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        NoiseModel::from_specs(&self.noise)
    }

    pub fn norm_list(&self) -> Result<Vec<Norm>> {
        self.norms
            .iter()
            .map(|n| Norm::try_from(n).map_err(|e| Error::Config(vec![e])))
            .collect()
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let mut cfg = SolverConfig::new(self.grid_spec()?, self.alpha, self.nu, self.dt, self.noise_model()?);
        cfg.stretching = self.solver.stretching;
        cfg.diffusion = self.solver.diffusion;
        Ok(cfg)
    }

    /// `ω₀` on the configured grid.
    pub fn initial_vorticity(&self) -> Result<SpectralField> {
        initial_vorticity(&self.initial_condition, &self.fields, self.grid_spec()?)
    }

    /// Canonical TOML rendering with every default filled in.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidArgument(format!("cannot render config: {e}")))
    }

    /// First 12 hex digits of the SHA-256 of the canonical rendering.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml_string()?.as_bytes());
        Ok(digest.iter().take(6).map(|b| format!("{b:02x}")).collect())
    }
}

/// Resolve an initial condition by name on `grid`.
pub fn initial_vorticity(name: &str, fields: &[NamedField], grid: GridSpec) -> Result<SpectralField> {
    let analytic = |f: fn(Vector3<f64>) -> Vector3<f64>| PhysicalField::from_fn(grid, f).to_spectral().truncated(1);
    match name {
        "zero" => Ok(SpectralField::zeros(grid)),
        "shear" => Ok(analytic(|x| Vector3::new(0.0, 0.0, x[0].cos()))),
        // vorticity of u = (sin x cos y cos z, −cos x sin y cos z, 0)
        "taylor_green" => Ok(analytic(|x| {
            let (s1, c1) = x[0].sin_cos();
            let (s2, c2) = x[1].sin_cos();
            let (s3, c3) = x[2].sin_cos();
            Vector3::new(-c1 * s2 * s3, -s1 * c2 * s3, 2.0 * s1 * s2 * c3)
        })),
        // a Beltrami field, curl u = u
        "abc" => Ok(analytic(|x| {
            Vector3::new(x[2].sin() + x[1].cos(), x[0].sin() + x[2].cos(), x[1].sin() + x[0].cos())
        })),
        _ => {
            let field = fields
                .iter()
                .find(|f| f.name == name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown initial condition `{name}`")))?;
            let modes: Vec<_> = field
                .modes
                .iter()
                .map(|m| (m.k, [0, 1, 2].map(|c| Complex64::new(m.re[c], m.im[c]))))
                .collect();
            let limit = grid.dealias_band() as i64;
            if let Some(m) = field.modes.iter().find(|m| m.k.iter().any(|kj| kj.abs() > limit)) {
                return Err(Error::BandTooLarge {
                    band: m.k.iter().map(|kj| kj.unsigned_abs() as usize).max().unwrap_or(0),
                    limit: limit as usize,
                });
            }
            SpectralField::from_modes(grid, &modes)
        }
    }
}
