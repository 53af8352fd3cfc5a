//! Transport-noise fields `σ_m` and counter-based Brownian drivers.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{GridSpec, PhysicalField, SpectralField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Cos,
    Sin,
}

/// Config-level description of one noise field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSpec {
    Constant { a: [f64; 3] },
    SingleMode { eps: [f64; 3], kappa: [i64; 3], phase: Phase },
}

/// Closed-form divergence-free noise field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum SigmaField {
    /// `σ(x) = a`.
    Constant { a: Vector3<f64> },
    /// `σ(x) = ε cos(κ·x)` or `ε sin(κ·x)`, with `ε·κ = 0`.
    SingleMode {
        eps: Vector3<f64>,
        kappa: [i64; 3],
        phase: Phase,
    },
}

impl SigmaField {
    pub fn constant(a: Vector3<f64>) -> Self {
        SigmaField::Constant { a }
    }

    pub fn single_mode(eps: Vector3<f64>, kappa: [i64; 3], phase: Phase) -> Result<Self> {
        let k = Vector3::new(kappa[0] as f64, kappa[1] as f64, kappa[2] as f64);
        let dot = eps.dot(&k);
        if dot != 0.0 {
            return Err(Error::NotDivergenceFree { dot });
        }
        Ok(SigmaField::SingleMode { eps, kappa, phase })
    }

    #[inline]
    fn angle(kappa: &[i64; 3], x: &Vector3<f64>) -> f64 {
        kappa[0] as f64 * x[0] + kappa[1] as f64 * x[1] + kappa[2] as f64 * x[2]
    }

    #[inline]
    pub fn eval(&self, x: &Vector3<f64>) -> Vector3<f64> {
        match self {
            SigmaField::Constant { a } => *a,
            SigmaField::SingleMode { eps, kappa, phase } => {
                let th = Self::angle(kappa, x);
                match phase {
                    Phase::Cos => eps * th.cos(),
                    Phase::Sin => eps * th.sin(),
                }
            }
        }
    }

    /// `(∇σ)_{ij} = ∂_j σ_i`.
    #[inline]
    pub fn gradient(&self, x: &Vector3<f64>) -> Matrix3<f64> {
        match self {
            SigmaField::Constant { .. } => Matrix3::zeros(),
            SigmaField::SingleMode { eps, kappa, phase } => {
                let th = Self::angle(kappa, x);
                let d = match phase {
                    Phase::Cos => -th.sin(),
                    Phase::Sin => th.cos(),
                };
                let k = Vector3::new(kappa[0] as f64, kappa[1] as f64, kappa[2] as f64);
                eps * k.transpose() * d
            }
        }
    }

    /// Value and gradient together, sharing the trigonometric evaluation.
    #[inline]
    pub fn eval_with_gradient(&self, x: &Vector3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
        match self {
            SigmaField::Constant { a } => (*a, Matrix3::zeros()),
            SigmaField::SingleMode { eps, kappa, phase } => {
                let (s, c) = Self::angle(kappa, x).sin_cos();
                let (v, d) = match phase {
                    Phase::Cos => (c, -s),
                    Phase::Sin => (s, c),
                };
                let k = Vector3::new(kappa[0] as f64, kappa[1] as f64, kappa[2] as f64);
                (eps * v, eps * k.transpose() * d)
            }
        }
    }

    /// `(∇σ)σ`.
    pub fn dot_grad(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let (v, g) = self.eval_with_gradient(x);
        g * v
    }

    /// Hessian contraction `Σ_{jk} a_{jk} ∂_j∂_k σ_i` for a symmetric weight.
    pub fn hessian_contract(&self, x: &Vector3<f64>, a: &Matrix3<f64>) -> Vector3<f64> {
        match self {
            SigmaField::Constant { .. } => Vector3::zeros(),
            SigmaField::SingleMode { kappa, .. } => {
                let k = Vector3::new(kappa[0] as f64, kappa[1] as f64, kappa[2] as f64);
                // every second derivative of a single mode is −k_j k_k σ
                -self.eval(x) * (k.transpose() * a * k)[0]
            }
        }
    }

    /// Exact Fourier coefficients on `grid`.
    pub fn to_spectral(&self, grid: GridSpec) -> Result<SpectralField> {
        let c = |v: Vector3<f64>, z: Complex64| [v[0], v[1], v[2]].map(|e| z * e);
        match self {
            SigmaField::Constant { a } => {
                SpectralField::from_modes(grid, &[([0, 0, 0], c(*a, Complex64::new(1.0, 0.0)))])
            }
            SigmaField::SingleMode { eps, kappa, phase } => {
                let z = match phase {
                    Phase::Cos => Complex64::new(0.5, 0.0),
                    Phase::Sin => Complex64::new(0.0, -0.5),
                };
                SpectralField::from_modes(grid, &[(*kappa, c(*eps, z))])
            }
        }
    }

    /// Largest `max_j |k_j|` carried by the field.
    pub fn band(&self) -> usize {
        match self {
            SigmaField::Constant { .. } => 0,
            SigmaField::SingleMode { kappa, .. } => {
                kappa.iter().map(|k| k.unsigned_abs() as usize).max().unwrap_or(0)
            }
        }
    }
}

impl TryFrom<&SigmaSpec> for SigmaField {
    type Error = Error;

    fn try_from(spec: &SigmaSpec) -> Result<Self> {
        match spec {
            SigmaSpec::Constant { a } => Ok(SigmaField::constant(Vector3::from(*a))),
            SigmaSpec::SingleMode { eps, kappa, phase } => {
                SigmaField::single_mode(Vector3::from(*eps), *kappa, *phase)
            }
        }
    }
}

/// Finite list of noise fields; term `m` is driven by the scalar Brownian
/// motion `W^m`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct NoiseModel {
    terms: Vec<SigmaField>,
}

impl NoiseModel {
    pub fn new(terms: Vec<SigmaField>) -> Self {
        Self { terms }
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn from_specs(specs: &[SigmaSpec]) -> Result<Self> {
        let terms = specs
            .iter()
            .map(SigmaField::try_from)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { terms })
    }

    #[inline]
    pub fn terms(&self) -> &[SigmaField] {
        &self.terms
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term(&self, m: usize) -> Result<&SigmaField> {
        self.terms.get(m).ok_or(Error::NoSuchNoiseTerm {
            index: m,
            len: self.terms.len(),
        })
    }

    pub fn sigma_eval(&self, m: usize, x: &Vector3<f64>) -> Result<Vector3<f64>> {
        Ok(self.term(m)?.eval(x))
    }

    pub fn sigma_gradient(&self, m: usize, x: &Vector3<f64>) -> Result<Matrix3<f64>> {
        Ok(self.term(m)?.gradient(x))
    }

    pub fn sigma_dot_grad_sigma(&self, m: usize, x: &Vector3<f64>) -> Result<Vector3<f64>> {
        Ok(self.term(m)?.dot_grad(x))
    }

    /// True when every term has zero gradient.
    pub fn is_constant(&self) -> bool {
        self.terms
            .iter()
            .all(|t| matches!(t, SigmaField::Constant { .. }))
    }

    /// Max over the grid of `|div(Σ_m σ_mσ_mᵀ + (∇σ_m)(∇σ_m)ᵀ)|`, the
    /// divergence taken row-wise with spectral derivatives.
    pub fn validate_assumption(&self, grid: GridSpec) -> Result<f64> {
        let band = self.terms.iter().map(SigmaField::band).max().unwrap_or(0);
        // products double the band
        if 2 * band >= grid.modes() / 2 {
            return Err(Error::BandTooLarge {
                band: 2 * band,
                limit: grid.modes() / 2 - 1,
            });
        }
        let mut rows = vec![vec![Vector3::zeros(); grid.len()]; 3];
        for idx in 0..grid.len() {
            let x = grid.node(idx);
            let mut m = Matrix3::zeros();
            for t in &self.terms {
                let (v, g) = t.eval_with_gradient(&x);
                m += v * v.transpose() + g * g.transpose();
            }
            for (i, row) in rows.iter_mut().enumerate() {
                row[idx] = m.row(i).transpose();
            }
        }
        let mut div = vec![Vector3::zeros(); grid.len()];
        for (i, row) in rows.into_iter().enumerate() {
            let spec = PhysicalField::from_samples(grid, row)?.to_spectral();
            // Σ_j ∂_j M_ij: component j of the derivative along axis j
            let mut acc = SpectralField::zeros(grid);
            for j in 0..3 {
                let d = spec.derivative(j);
                let target = acc.component_mut(0);
                for (a, b) in target.iter_mut().zip(d.component(j)) {
                    *a += b;
                }
            }
            let phys = acc.to_physical();
            for (slot, v) in div.iter_mut().zip(phys.samples()) {
                slot[i] = v[0];
            }
        }
        Ok(div.iter().map(|v| v.norm()).fold(0.0, f64::max))
    }

    /// Max over the grid of `|div σ_m|` for every term.
    pub fn divergence_residual(&self, grid: GridSpec) -> Result<f64> {
        let mut worst = 0.0f64;
        for t in &self.terms {
            worst = worst.max(t.to_spectral(grid)?.divergence_defect());
        }
        Ok(worst)
    }
}

/// Which family of Brownian paths a driver belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StreamKind {
    /// Common noise `W^m`, shared by every consumer in an experiment.
    W,
    /// Idiosyncratic noise `B^i`, one per particle or flow label.
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub kind: StreamKind,
    pub index: u64,
}

impl StreamId {
    pub fn w(index: u64) -> Self {
        Self {
            kind: StreamKind::W,
            index,
        }
    }

    pub fn b(index: u64) -> Self {
        Self {
            kind: StreamKind::B,
            index,
        }
    }

    fn code(&self) -> u64 {
        match self.kind {
            StreamKind::W => self.index & !(1 << 63),
            StreamKind::B => self.index | (1 << 63),
        }
    }
}

// 32-bit words reserved per fine step: two Box–Muller pairs.
const WORDS_PER_STEP: u128 = 8;

/// Stateless Brownian increments: step `n` of stream `id` is a fixed
/// function of `(seed, id, n)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BrownianDriver {
    seed: u64,
    stream: StreamId,
    dt: f64,
    substeps: u64,
}

impl BrownianDriver {
    pub fn new(seed: u64, stream: StreamId, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        Ok(Self {
            seed,
            stream,
            dt,
            substeps: 1,
        })
    }

    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn stream(&self) -> StreamId {
        self.stream
    }

    /// Step size of the increments this driver returns.
    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt * self.substeps as f64
    }

    /// Driver on the same path with steps `factor` times longer; each coarse
    /// increment is the sum of the underlying fine increments.
    pub fn coarsened(&self, factor: u64) -> Self {
        Self {
            substeps: self.substeps * factor.max(1),
            ..*self
        }
    }

    fn rng_at(&self, fine_step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream.code());
        rng.set_word_pos(fine_step as u128 * WORDS_PER_STEP);
        rng
    }

    fn normals(&self, fine_step: u64) -> [f64; 4] {
        let mut rng = self.rng_at(fine_step);
        let mut out = [0.0; 4];
        for pair in out.chunks_mut(2) {
            let (z0, z1) = box_muller(rng.next_u64(), rng.next_u64());
            pair[0] = z0;
            pair[1] = z1;
        }
        out
    }

    /// Scalar increment `ΔW` over step `step`, distributed `N(0, dt)`.
    pub fn increment(&self, step: u64) -> f64 {
        let sd = self.dt.sqrt();
        (0..self.substeps)
            .map(|j| self.normals(step * self.substeps + j)[0] * sd)
            .sum()
    }

    /// Vector increment `ΔB` over step `step`, components i.i.d. `N(0, dt)`.
    pub fn vector_increment(&self, step: u64) -> Vector3<f64> {
        let sd = self.dt.sqrt();
        (0..self.substeps)
            .map(|j| {
                let z = self.normals(step * self.substeps + j);
                Vector3::new(z[0], z[1], z[2]) * sd
            })
            .sum()
    }

    /// `W` at `step · dt`, the sum of the first `step` increments.
    pub fn path_value(&self, step: u64) -> f64 {
        (0..step).map(|n| self.increment(n)).sum()
    }
}

#[inline]
fn box_muller(a: u64, b: u64) -> (f64, f64) {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    // u1 in (0, 1], u2 in [0, 1)
    let u1 = ((a >> 11) + 1) as f64 * SCALE;
    let u2 = (b >> 11) as f64 * SCALE;
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// One driver per noise term, all keyed on the common-noise seed.
pub fn common_drivers(noise: &NoiseModel, seed: u64, dt: f64) -> Result<Vec<BrownianDriver>> {
    (0..noise.len())
        .map(|m| BrownianDriver::new(seed, StreamId::w(m as u64), dt))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(e: f64) -> SigmaField {
        SigmaField::single_mode(Vector3::new(0.0, 0.0, e), [1, 0, 0], Phase::Cos).unwrap()
    }

    #[test]
    fn constant_field() {
        let s = SigmaField::constant(Vector3::new(0.3, -1.0, 2.0));
        let x = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(s.eval(&x), Vector3::new(0.3, -1.0, 2.0));
        assert_eq!(s.gradient(&x), Matrix3::zeros());
        assert_eq!(s.dot_grad(&x), Vector3::zeros());
    }

    #[test]
    fn single_mode_values() {
        let s = single(0.7);
        let x = Vector3::new(0.4, 1.0, -2.0);
        assert!((s.eval(&x) - Vector3::new(0.0, 0.0, 0.7 * 0.4f64.cos())).norm() < 1e-16);
        let g = s.gradient(&x);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if (i, j) == (2, 0) { -0.7 * 0.4f64.sin() } else { 0.0 };
                assert!((g[(i, j)] - expect).abs() < 1e-16);
            }
        }
        assert_eq!(s.dot_grad(&x), Vector3::zeros());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let fields = [
            single(0.5),
            SigmaField::single_mode(Vector3::new(1.0, -1.0, 0.5), [1, 1, 0], Phase::Sin).unwrap(),
            SigmaField::single_mode(Vector3::new(2.0, 0.0, -1.0), [1, -1, 2], Phase::Cos).unwrap(),
        ];
        let h = 1e-5;
        let x = Vector3::new(0.7, -1.3, 2.2);
        for s in fields {
            let g = s.gradient(&x);
            for j in 0..3 {
                let mut e = Vector3::zeros();
                e[j] = h;
                let fd = (s.eval(&(x + e)) - s.eval(&(x - e))) / (2.0 * h);
                for i in 0..3 {
                    assert!((fd[i] - g[(i, j)]).abs() < 1e-8);
                }
            }
            // divergence-free analytically
            assert!(g.trace().abs() < 1e-15);
            assert!((s.dot_grad(&x) - g * s.eval(&x)).norm() < 1e-16);
        }
    }

    #[test]
    fn parallel_amplitude_is_rejected() {
        let r = SigmaField::single_mode(Vector3::new(1.0, 0.0, 0.0), [1, 0, 0], Phase::Cos);
        assert!(matches!(r, Err(Error::NotDivergenceFree { .. })));
        let spec = SigmaSpec::SingleMode {
            eps: [0.0, 1.0, 1.0],
            kappa: [0, 1, 0],
            phase: Phase::Sin,
        };
        assert!(NoiseModel::from_specs(&[spec]).is_err());
    }

    #[test]
    fn assumption_residuals() {
        let g = GridSpec::new(32).unwrap();
        let c = NoiseModel::new(vec![SigmaField::constant(Vector3::new(0.3, 0.0, 0.0))]);
        assert!(c.validate_assumption(g).unwrap() <= 1e-12);
        let s = NoiseModel::new(vec![single(1.0)]);
        assert!(s.validate_assumption(g).unwrap() <= 1e-12);
        assert!(s.divergence_residual(g).unwrap() <= 1e-12);
        assert!(NoiseModel::none().validate_assumption(g).unwrap() == 0.0);
    }

    #[test]
    fn spectral_form_matches_pointwise() {
        let g = GridSpec::new(8).unwrap();
        for s in [
            single(0.5),
            SigmaField::single_mode(Vector3::new(1.0, -1.0, 0.5), [1, 1, 0], Phase::Sin).unwrap(),
            SigmaField::constant(Vector3::new(1.0, 2.0, 3.0)),
        ] {
            let p = s.to_spectral(g).unwrap().to_physical();
            for idx in 0..g.len() {
                assert!((p.at(idx) - s.eval(&g.node(idx))).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn driver_is_deterministic_and_streams_differ() {
        let d = BrownianDriver::new(42, StreamId::w(0), 1e-3).unwrap();
        assert_eq!(d.increment(17), d.increment(17));
        assert_eq!(d.vector_increment(3), d.vector_increment(3));
        let e = BrownianDriver::new(42, StreamId::b(0), 1e-3).unwrap();
        assert_ne!(d.increment(17), e.increment(17));
        let f = BrownianDriver::new(43, StreamId::w(0), 1e-3).unwrap();
        assert_ne!(d.increment(17), f.increment(17));
    }

    #[test]
    fn coarsened_driver_sums_fine_steps() {
        let fine = BrownianDriver::new(9, StreamId::w(1), 1e-3).unwrap();
        let coarse = fine.coarsened(2);
        assert_eq!(coarse.dt(), 2e-3);
        for n in 0..5 {
            let s = fine.increment(2 * n) + fine.increment(2 * n + 1);
            assert_eq!(coarse.increment(n), s);
        }
        assert!((coarse.path_value(5) - fine.path_value(10)).abs() < 1e-15);
    }

    #[test]
    fn increments_have_the_right_moments() {
        let dt = 1e-3;
        let d = BrownianDriver::new(2024, StreamId::w(0), dt).unwrap();
        let n = 1_000_000u64;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for k in 0..n {
            let x = d.increment(k);
            sum += x;
            sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 * (dt / n as f64).sqrt(), "mean {mean}");
        assert!((var - dt).abs() < 0.01 * dt, "var {var}");
    }
}
