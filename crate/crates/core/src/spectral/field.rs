use std::ops::{Add, Mul, Sub};

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::fft;
use super::grid::{GridSpec, TORUS_VOLUME};
use crate::error::{Error, Result};

/// Complex 3-vector of Fourier coefficients for one wavevector.
pub type CVec3 = [Complex64; 3];

/// Fourier coefficients of a real `R³`-valued field on the torus.
///
/// Normalized so that `f(x) = Σ_k c_k e^{ik·x}`; the zero mode is the spatial
/// mean. Components are stored separately in FFT order.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    grid: GridSpec,
    coeffs: [Vec<Complex64>; 3],
}

/// Samples of a real `R³`-valued field on the grid nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalField {
    grid: GridSpec,
    samples: Vec<Vector3<f64>>,
}

/// Matrix-valued grid field, used for gradients: entry `(i, j)` is `∂_j v_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorField {
    grid: GridSpec,
    entries: Vec<Matrix3<f64>>,
}

impl SpectralField {
    pub fn zeros(grid: GridSpec) -> Self {
        let len = grid.len();
        Self {
            grid,
            coeffs: [
                vec![Complex64::default(); len],
                vec![Complex64::default(); len],
                vec![Complex64::default(); len],
            ],
        }
    }

    pub fn from_components(grid: GridSpec, coeffs: [Vec<Complex64>; 3]) -> Result<Self> {
        if coeffs.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients per component",
                grid.len()
            )));
        }
        Ok(Self { grid, coeffs })
    }

    /// Field built from `(k, c_k)` pairs; the conjugate `c_{−k}` is filled in.
    pub fn from_modes(grid: GridSpec, modes: &[([i64; 3], CVec3)]) -> Result<Self> {
        let mut field = Self::zeros(grid);
        for &(k, c) in modes {
            field.set_mode(k, c)?;
        }
        Ok(field)
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn component(&self, c: usize) -> &[Complex64] {
        &self.coeffs[c]
    }

    #[inline]
    pub fn component_mut(&mut self, c: usize) -> &mut [Complex64] {
        &mut self.coeffs[c]
    }

    pub fn into_components(self) -> [Vec<Complex64>; 3] {
        self.coeffs
    }

    #[inline]
    pub fn coeff(&self, idx: usize) -> CVec3 {
        [self.coeffs[0][idx], self.coeffs[1][idx], self.coeffs[2][idx]]
    }

    #[inline]
    pub fn set_coeff(&mut self, idx: usize, value: CVec3) {
        for c in 0..3 {
            self.coeffs[c][idx] = value[c];
        }
    }

    /// Coefficient at wavevector `k`, or `None` outside the grid.
    pub fn get(&self, k: [i64; 3]) -> Option<CVec3> {
        self.grid.index_of(k).map(|idx| self.coeff(idx))
    }

    /// Set `c_k` and `c_{−k} = conj(c_k)`.
    pub fn set_mode(&mut self, k: [i64; 3], value: CVec3) -> Result<()> {
        let idx = self
            .grid
            .index_of(k)
            .ok_or_else(|| Error::InvalidArgument(format!("wavevector {k:?} outside grid")))?;
        let cidx = self.grid.conjugate_index(idx);
        if idx == cidx {
            self.set_coeff(idx, value.map(|z| Complex64::new(z.re, 0.0)));
        } else {
            self.set_coeff(idx, value);
            self.set_coeff(cidx, value.map(|z| z.conj()));
        }
        Ok(())
    }

    /// Multiply every coefficient by a scalar multiplier depending on `k`.
    pub fn map_scalar(&self, f: impl Fn([i64; 3]) -> f64) -> Self {
        let mut out = self.clone();
        for idx in 0..self.grid.len() {
            let s = f(self.grid.wavevector(idx));
            for c in 0..3 {
                out.coeffs[c][idx] *= s;
            }
        }
        out
    }

    /// Apply a per-mode map `(k, c_k) -> c'_k`.
    pub fn map_modes(&self, f: impl Fn(usize, CVec3) -> CVec3) -> Self {
        let mut out = Self::zeros(self.grid);
        for idx in 0..self.grid.len() {
            out.set_coeff(idx, f(idx, self.coeff(idx)));
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.scale_in_place(s);
        out
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for comp in &mut self.coeffs {
            comp.iter_mut().for_each(|z| *z *= s);
        }
    }

    /// `self += a · other`.
    pub fn axpy(&mut self, a: f64, other: &SpectralField) {
        debug_assert_eq!(self.grid, other.grid);
        for c in 0..3 {
            for (x, y) in self.coeffs[c].iter_mut().zip(&other.coeffs[c]) {
                *x += y * a;
            }
        }
    }

    pub fn ensure_same_grid(&self, other: &SpectralField) -> Result<()> {
        if self.grid.modes() != other.grid.modes() {
            return Err(Error::GridMismatch {
                left: self.grid.modes(),
                right: other.grid.modes(),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs
            .iter()
            .all(|c| c.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for idx in 0..self.grid.len() {
            m = m.max(cvec_norm(&self.coeff(idx)));
        }
        m
    }

    /// `max_k |c_{−k} − conj(c_k)|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for idx in 0..self.grid.len() {
            let cidx = self.grid.conjugate_index(idx);
            for c in 0..3 {
                worst = worst.max((self.coeffs[c][cidx] - self.coeffs[c][idx].conj()).norm());
            }
        }
        worst
    }

    pub fn to_physical(&self) -> PhysicalField {
        let plan = fft::plan(self.grid.modes());
        let (a, b) = plan.inverse_real_pair(&self.coeffs[0], &self.coeffs[1]);
        let c = plan.inverse_real(&self.coeffs[2]);
        let samples = (0..self.grid.len())
            .map(|i| Vector3::new(a[i], b[i], c[i]))
            .collect();
        PhysicalField {
            grid: self.grid,
            samples,
        }
    }

    /// Multiply by `i k_axis` (axis is 0-based).
    pub fn derivative(&self, axis: usize) -> SpectralField {
        assert!(axis < 3, "axis must be 0, 1 or 2");
        let g = self.grid;
        let mut out = self.clone();
        for idx in 0..g.len() {
            let n = g.unflat(idx);
            let k = g.derivative_wavenumber(n[axis]);
            let ik = Complex64::new(0.0, k);
            for c in 0..3 {
                out.coeffs[c][idx] *= ik;
            }
        }
        out
    }

    /// Gradient on the grid, `(∇v)_{ij} = ∂_j v_i`.
    pub fn gradient_tensor(&self) -> TensorField {
        let g = self.grid;
        let len = g.len();
        let plan = fft::plan(g.modes());
        // nine spectra: entry (i, j) = i k_j v̂_i
        let mut spectra: Vec<Vec<Complex64>> = Vec::with_capacity(9);
        for i in 0..3 {
            for j in 0..3 {
                let mut s = vec![Complex64::default(); len];
                for (idx, out) in s.iter_mut().enumerate() {
                    let kj = g.derivative_wavenumber(g.unflat(idx)[j]);
                    *out = self.coeffs[i][idx] * Complex64::new(0.0, kj);
                }
                spectra.push(s);
            }
        }
        let mut real: Vec<Vec<f64>> = Vec::with_capacity(9);
        for pair in spectra.chunks(2) {
            if pair.len() == 2 {
                let (a, b) = plan.inverse_real_pair(&pair[0], &pair[1]);
                real.push(a);
                real.push(b);
            } else {
                real.push(plan.inverse_real(&pair[0]));
            }
        }
        let entries = (0..len)
            .map(|n| Matrix3::from_fn(|i, j| real[3 * i + j][n]))
            .collect();
        TensorField { grid: g, entries }
    }

    /// Zero every mode with `max_j |k_j| > dealias_fraction · M/2`.
    pub fn dealiased(&self) -> SpectralField {
        let mut out = self.clone();
        out.dealias_in_place();
        out
    }

    pub fn dealias_in_place(&mut self) {
        let g = self.grid;
        let cut = g.dealias_fraction() * (g.modes() / 2) as f64;
        for idx in 0..g.len() {
            let k = g.wavevector(idx);
            if k.iter().any(|&kj| kj.abs() as f64 > cut) {
                for c in 0..3 {
                    self.coeffs[c][idx] = Complex64::default();
                }
            }
        }
    }

    /// Keep only modes with `max_j |k_j| <= band`.
    pub fn truncated(&self, band: usize) -> SpectralField {
        let g = self.grid;
        self.map_modes(|idx, c| {
            if g.wavevector(idx).iter().all(|&kj| kj.unsigned_abs() as usize <= band) {
                c
            } else {
                [Complex64::default(); 3]
            }
        })
    }

    /// Largest `max_j |k_j|` over nonzero coefficients.
    pub fn support_band(&self) -> usize {
        let g = self.grid;
        let mut band = 0;
        for idx in 0..g.len() {
            if cvec_norm(&self.coeff(idx)) != 0.0 {
                let k = g.wavevector(idx);
                band = band.max(k.iter().map(|x| x.unsigned_abs() as usize).max().unwrap_or(0));
            }
        }
        band
    }

    /// Same field on another grid: modes with `|k_j| < min(M, M')/2` are
    /// copied, everything else (including Nyquist) is zero.
    pub fn resampled(&self, grid: GridSpec) -> SpectralField {
        let limit = (self.grid.modes().min(grid.modes()) / 2) as i64;
        let mut out = SpectralField::zeros(grid);
        for idx in 0..self.grid.len() {
            let k = self.grid.wavevector(idx);
            if k.iter().all(|kj| kj.abs() < limit) {
                out.set_coeff(grid.index_of(k).expect("mode inside both grids"), self.coeff(idx));
            }
        }
        out
    }

    /// `‖f‖_{H^s_2}` with weight `(1+|k|²)^s` on squared coefficients,
    /// normalized so that `s = 0` is the L² norm over `[0, 2π)³`.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        let g = self.grid;
        let mut acc = 0.0;
        for idx in 0..g.len() {
            let k = g.wavevector(idx);
            let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
            let c = self.coeff(idx);
            let mag2: f64 = c.iter().map(|z| z.norm_sqr()).sum();
            if mag2 != 0.0 {
                acc += (1.0 + k2).powf(s) * mag2;
            }
        }
        (TORUS_VOLUME * acc).sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        self.sobolev_norm(0.0)
    }

    /// Leray projection `(I − k kᵀ/|k|²) ĉ_k`; the zero mode is kept.
    pub fn leray_projected(&self) -> SpectralField {
        let g = self.grid;
        self.map_modes(|idx, c| {
            let k = g.wavevector(idx).map(|x| x as f64);
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            if k2 == 0.0 {
                return c;
            }
            let dot = c[0] * k[0] + c[1] * k[1] + c[2] * k[2];
            [
                c[0] - dot * (k[0] / k2),
                c[1] - dot * (k[1] / k2),
                c[2] - dot * (k[2] / k2),
            ]
        })
    }

    /// `max_{k≠0} |k · c_k|`.
    pub fn divergence_defect(&self) -> f64 {
        let g = self.grid;
        let mut worst = 0.0f64;
        for idx in 0..g.len() {
            let k = g.wavevector(idx).map(|x| x as f64);
            let c = self.coeff(idx);
            let dot = c[0] * k[0] + c[1] * k[1] + c[2] * k[2];
            worst = worst.max(dot.norm());
        }
        worst
    }

    /// Random real field with Gaussian coefficients on `max_j |k_j| <= band`,
    /// amplitudes decaying like `(1+|k|²)^{-1}`.
    pub fn random_band_limited(grid: GridSpec, band: usize, seed: u64) -> Result<Self> {
        if band >= grid.modes() / 2 {
            return Err(Error::BandTooLarge {
                band,
                limit: grid.modes() / 2 - 1,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut field = Self::zeros(grid);
        let b = band as i64;
        for k3 in -b..=b {
            for k2 in -b..=b {
                for k1 in -b..=b {
                    let k = [k1, k2, k3];
                    // visit each ±k pair once
                    if k <= [-k1, -k2, -k3] && k != [0, 0, 0] {
                        continue;
                    }
                    let k2n = (k1 * k1 + k2 * k2 + k3 * k3) as f64;
                    let amp = 1.0 / (1.0 + k2n);
                    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
                    let c = [0, 1, 2].map(|_| Complex64::new(draw() * amp, draw() * amp));
                    field.set_mode(k, c)?;
                }
            }
        }
        Ok(field)
    }
}

impl Add for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(1.0, rhs);
        out
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(-1.0, rhs);
        out
    }
}

impl Mul<f64> for &SpectralField {
    type Output = SpectralField;
    fn mul(self, rhs: f64) -> SpectralField {
        self.scaled(rhs)
    }
}

impl PhysicalField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            samples: vec![Vector3::zeros(); grid.len()],
        }
    }

    pub fn from_samples(grid: GridSpec, samples: Vec<Vector3<f64>>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} samples, got {}",
                grid.len(),
                samples.len()
            )));
        }
        Ok(Self { grid, samples })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(Vector3<f64>) -> Vector3<f64>) -> Self {
        let samples = (0..grid.len()).map(|i| f(grid.node(i))).collect();
        Self { grid, samples }
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn at(&self, idx: usize) -> Vector3<f64> {
        self.samples[idx]
    }

    #[inline]
    pub fn samples(&self) -> &[Vector3<f64>] {
        &self.samples
    }

    #[inline]
    pub fn samples_mut(&mut self) -> &mut [Vector3<f64>] {
        &mut self.samples
    }

    pub fn to_spectral(&self) -> SpectralField {
        let plan = fft::plan(self.grid.modes());
        let comp = |c: usize| -> Vec<f64> { self.samples.iter().map(|v| v[c]).collect() };
        let (a, b) = plan.forward_real_pair(&comp(0), &comp(1));
        let c = plan.forward_real(&comp(2));
        SpectralField {
            grid: self.grid,
            coeffs: [a, b, c],
        }
    }

    /// `max_x |f(x)|` over the nodes (Euclidean magnitude).
    pub fn sup_norm(&self) -> f64 {
        self.samples.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Riemann-sum L² norm over the nodes.
    pub fn l2_quadrature(&self) -> f64 {
        let h = self.grid.spacing();
        let sum: f64 = self.samples.iter().map(|v| v.norm_squared()).sum();
        (sum * h * h * h).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

impl TensorField {
    pub fn from_entries(grid: GridSpec, entries: Vec<Matrix3<f64>>) -> Result<Self> {
        if entries.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} entries, got {}",
                grid.len(),
                entries.len()
            )));
        }
        Ok(Self { grid, entries })
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn at(&self, idx: usize) -> Matrix3<f64> {
        self.entries[idx]
    }

    #[inline]
    pub fn entries(&self) -> &[Matrix3<f64>] {
        &self.entries
    }

    pub fn max_abs_trace(&self) -> f64 {
        self.entries.iter().map(|m| m.trace().abs()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|m| m.amax()).fold(0.0, f64::max)
    }
}

#[inline]
pub(crate) fn cvec_norm(c: &CVec3) -> f64 {
    c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}
