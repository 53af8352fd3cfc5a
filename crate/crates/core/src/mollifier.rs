//! The compactly supported radial bump `V(x) = c·exp(−1/(π² − 4|x|²))` on
//! `|x| < π/2`, its particle-number scaling `V^N(x) = N^{3β} V(N^β x)` and
//! its Fourier multipliers.

use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::legendre::GaussLegendre;
use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{minimum_image, GridSpec, PhysicalField, TORUS_VOLUME};

/// Support radius of the unscaled bump.
pub const SUPPORT_RADIUS: f64 = PI / 2.0;

/// Minimum number of grid spacings across the support diameter for a
/// node-sampled transform.
pub const MIN_NODES_ACROSS: f64 = 4.0;

const GL_DEGREE: usize = 16;
const GRADING_LEVELS: i32 = 48;
const NORMALIZATION_SUBPANELS: usize = 4;
const SPECTRUM_SUBPANELS: usize = 4;

fn rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(GL_DEGREE).unwrap()))
}

/// Composite Gauss–Legendre quadrature of `f` over `[a, b]`.
pub fn composite_gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let rule = rule();
    (0..panels)
        .map(|p| {
            let lo = a + p as f64 * h;
            rule.integrate(lo, lo + h, &f)
        })
        .sum()
}

/// Integral of `f` over `[0, π/2]` on panels graded geometrically toward the
/// support edge, where the profile has an essential singularity; each graded
/// panel is split into `subpanels` equal pieces.
pub fn graded_radial_integral(f: impl Fn(f64) -> f64, subpanels: usize) -> f64 {
    let edge = |j: i32| SUPPORT_RADIUS * (1.0 - 0.5f64.powi(j));
    let mut total = 0.0;
    for j in 0..GRADING_LEVELS {
        total += composite_gauss_legendre(&f, edge(j), edge(j + 1), subpanels);
    }
    total
}

/// Unnormalized radial profile `exp(−1/(π² − 4r²))`, zero for `r ≥ π/2`.
#[inline]
pub fn radial_profile(r: f64) -> f64 {
    let gap = PI * PI - 4.0 * r * r;
    if gap <= 0.0 {
        0.0
    } else {
        (-1.0 / gap).exp()
    }
}

/// `∫_{|x|<π/2} exp(−1/(π² − 4|x|²)) dx` in spherical coordinates.
pub fn unnormalized_mass(subpanels: usize) -> f64 {
    4.0 * PI * graded_radial_integral(|r| radial_profile(r) * r * r, subpanels)
}

/// Constant `c` giving the bump unit mass, Richardson-checked against a
/// quadrature with twice as many subpanels.
pub fn normalization_constant() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| {
        let coarse = unnormalized_mass(NORMALIZATION_SUBPANELS);
        let fine = unnormalized_mass(2 * NORMALIZATION_SUBPANELS);
        assert!(
            (coarse - fine).abs() <= 1e-13 * fine,
            "bump quadrature not converged: {coarse} vs {fine}"
        );
        1.0 / fine
    })
}

/// Normalized bump at a torus point, using the geodesic distance to 0.
#[inline]
pub fn bump_eval(x: &Vector3<f64>) -> f64 {
    normalization_constant() * radial_profile(minimum_image(x).norm())
}

/// Radial Fourier transform `∫ V(x) e^{−iκ·x} dx` of the normalized bump at
/// `|κ| = kappa`.
pub fn bump_transform(kappa: f64) -> f64 {
    let c = normalization_constant();
    let integrand = |r: f64| {
        let kr = kappa * r;
        let sinc = if kr.abs() < 1e-8 { 1.0 - kr * kr / 6.0 } else { kr.sin() / kr };
        radial_profile(r) * r * r * sinc
    };
    4.0 * PI * c * graded_radial_integral(integrand, SPECTRUM_SUBPANELS)
}

/// Scaled mollifier for an ensemble of `N` particles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MollifierSpec {
    beta: f64,
    particles: usize,
    c: f64,
    width_scale: f64,
}

impl MollifierSpec {
    pub fn new(particles: usize, beta: f64) -> Result<Self> {
        if particles == 0 {
            return Err(Error::InvalidArgument("particle count must be positive".into()));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
        }
        Ok(Self {
            beta,
            particles,
            c: normalization_constant(),
            width_scale: (particles as f64).powf(beta),
        })
    }

    #[inline]
    pub fn beta(&self) -> f64 {
        self.beta
    }

    #[inline]
    pub fn particles(&self) -> usize {
        self.particles
    }

    #[inline]
    pub fn c(&self) -> f64 {
        self.c
    }

    /// `N^β`.
    #[inline]
    pub fn width_scale(&self) -> f64 {
        self.width_scale
    }

    /// `(π/2) N^{−β}`.
    #[inline]
    pub fn support_radius(&self) -> f64 {
        SUPPORT_RADIUS / self.width_scale
    }

    /// `V^N(0) = N^{3β} c e^{−1/π²}`.
    pub fn peak(&self) -> f64 {
        self.width_scale.powi(3) * self.c * radial_profile(0.0)
    }

    #[inline]
    pub fn eval(&self, x: &Vector3<f64>) -> f64 {
        let rho = self.width_scale * minimum_image(x).norm();
        self.width_scale.powi(3) * self.c * radial_profile(rho)
    }

    pub fn gradient(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let y = minimum_image(x);
        let s = self.width_scale;
        let rho = s * y.norm();
        let gap = PI * PI - 4.0 * rho * rho;
        if gap <= 0.0 {
            return Vector3::zeros();
        }
        let f = (-1.0 / gap).exp();
        y * (s.powi(5) * self.c * f * (-8.0 / (gap * gap)))
    }

    /// Grid quadrature of `V^N` over the torus.
    pub fn grid_mass(&self, grid: &GridSpec) -> f64 {
        let h = grid.spacing();
        let sum: f64 = (0..grid.len()).map(|i| self.eval(&grid.node(i))).sum();
        sum * h * h * h
    }

    /// Nodes spanned by the support diameter on `grid`.
    pub fn nodes_across(&self, grid: &GridSpec) -> f64 {
        2.0 * self.support_radius() / grid.spacing()
    }

    /// Multipliers `∫ V^N(x) e^{−ik·x} dx` from the analytic radial transform.
    pub fn spectrum(&self, max_band: usize) -> MollifierSpectrum {
        let max_k2 = 3 * max_band * max_band;
        let table = (0..=max_k2)
            .map(|k2| bump_transform((k2 as f64).sqrt() / self.width_scale))
            .collect();
        MollifierSpectrum {
            max_band,
            table,
        }
    }

    /// [`spectrum`](Self::spectrum) memoized per `(N, β, band)`.
    pub fn cached_spectrum(&self, max_band: usize) -> Arc<MollifierSpectrum> {
        type Cache = Mutex<HashMap<(usize, u64, usize), Arc<MollifierSpectrum>>>;
        static CACHE: OnceLock<Cache> = OnceLock::new();
        let key = (self.particles, self.beta.to_bits(), max_band);
        if let Some(hit) = CACHE.get_or_init(Default::default).lock().unwrap().get(&key) {
            return hit.clone();
        }
        let fresh = Arc::new(self.spectrum(max_band));
        CACHE
            .get_or_init(Default::default)
            .lock()
            .unwrap()
            .entry(key)
            .or_insert(fresh)
            .clone()
    }

    /// Multipliers on the full grid from the analytic transform, in FFT order.
    pub fn spectral_coefficients(&self, grid: &GridSpec) -> Vec<f64> {
        let spectrum = self.spectrum(grid.modes() / 2);
        (0..grid.len())
            .map(|idx| spectrum.at(grid.wavevector(idx)))
            .collect()
    }

    /// Multipliers from the FFT of `V^N` sampled at the grid nodes. Fails when
    /// the support diameter spans fewer than four grid spacings.
    pub fn sampled_coefficients(&self, grid: &GridSpec) -> Result<Vec<f64>> {
        let nodes = self.nodes_across(grid);
        if nodes < MIN_NODES_ACROSS {
            return Err(Error::UnderResolved {
                diameter: 2.0 * self.support_radius(),
                nodes,
                required: MIN_NODES_ACROSS,
            });
        }
        let sampled = PhysicalField::from_fn(*grid, |x| Vector3::new(self.eval(&x), 0.0, 0.0));
        Ok(sampled
            .to_spectral()
            .component(0)
            .iter()
            .map(|z| z.re * TORUS_VOLUME)
            .collect())
    }
}

/// Radial mollifier multipliers tabulated by `|k|²` up to a band.
#[derive(Clone, Debug, PartialEq)]
pub struct MollifierSpectrum {
    max_band: usize,
    table: Vec<f64>,
}

impl MollifierSpectrum {
    #[inline]
    pub fn max_band(&self) -> usize {
        self.max_band
    }

    #[inline]
    pub fn at(&self, k: [i64; 3]) -> f64 {
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as usize;
        self.table[k2]
    }

    #[inline]
    pub fn at_norm_sqr(&self, k2: usize) -> f64 {
        self.table[k2]
    }
}

/// Outcome of the parameter-regime check `p > 6`, `6/p < α < 1`,
/// `0 < β < 1/(3 + α − 6/p)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BetaBound {
    pub ok: bool,
    /// `1/(3 + α − 6/p)`.
    pub bound: f64,
    pub p_slack: f64,
    /// `min(α − 6/p, 1 − α)`.
    pub alpha_slack: f64,
    /// `min(β, bound − β)`.
    pub beta_slack: f64,
}

pub fn beta_bound_check(p: f64, alpha: f64, beta: f64) -> BetaBound {
    let bound = 1.0 / (3.0 + alpha - 6.0 / p);
    let p_slack = p - 6.0;
    let alpha_slack = (alpha - 6.0 / p).min(1.0 - alpha);
    let beta_slack = beta.min(bound - beta);
    BetaBound {
        ok: p_slack > 0.0 && alpha_slack > 0.0 && beta_slack > 0.0,
        bound,
        p_slack,
        alpha_slack,
        beta_slack,
    }
}
