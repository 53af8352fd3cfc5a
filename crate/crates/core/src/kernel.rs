//! The α-smoothed Biot–Savart operator: `û_k = i m(k) k × ω̂_k` with
//! `m(k) = 1/(|k|²(1 + α²|k|²))`.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mollifier::MollifierSpectrum;
use crate::spectral::{CVec3, GridSpec, SpectralField, TensorField, TORUS_VOLUME};

#[derive(Clone, Debug, PartialEq)]
pub struct AlphaKernel {
    alpha: f64,
    grid: GridSpec,
    multiplier: Vec<f64>,
}

/// `1/(|k|²(1 + α²|k|²))`, zero at `k = 0`.
#[inline]
pub fn multiplier(alpha: f64, k2: f64) -> f64 {
    if k2 == 0.0 {
        0.0
    } else {
        1.0 / (k2 * (1.0 + alpha * alpha * k2))
    }
}

#[inline]
pub(crate) fn cross_ik(k: [f64; 3], c: &CVec3, scale: f64) -> CVec3 {
    // i·scale·(k × c)
    let x = [
        c[2] * k[1] - c[1] * k[2],
        c[0] * k[2] - c[2] * k[0],
        c[1] * k[0] - c[0] * k[1],
    ];
    x.map(|z| Complex64::new(-z.im * scale, z.re * scale))
}

impl AlphaKernel {
    pub fn new(alpha: f64, grid: GridSpec) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        let multiplier = (0..grid.len())
            .map(|idx| {
                let k = grid.wavevector(idx);
                multiplier(alpha, (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64)
            })
            .collect();
        Ok(Self {
            alpha,
            grid,
            multiplier,
        })
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Cached `m(k)` in FFT order.
    #[inline]
    pub fn multipliers(&self) -> &[f64] {
        &self.multiplier
    }

    #[inline]
    pub fn multiplier_at(&self, k: [i64; 3]) -> f64 {
        multiplier(self.alpha, (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64)
    }

    fn check_grid(&self, f: &SpectralField) -> Result<()> {
        if f.grid().modes() != self.grid.modes() {
            return Err(Error::GridMismatch {
                left: f.grid().modes(),
                right: self.grid.modes(),
            });
        }
        Ok(())
    }

    /// Velocity coefficients of vorticity `omega`. Nyquist components of
    /// `k` are treated as zero, as in the spectral derivative.
    pub fn velocity_from_vorticity(&self, omega: &SpectralField) -> Result<SpectralField> {
        self.check_grid(omega)?;
        let g = self.grid;
        Ok(omega.map_modes(|idx, c| {
            let n = g.unflat(idx);
            let k = n.map(|nj| g.derivative_wavenumber(nj));
            cross_ik(k, &c, self.multiplier[idx])
        }))
    }

    /// `∂_j u_i` on the grid.
    pub fn velocity_gradient(&self, omega: &SpectralField) -> Result<TensorField> {
        Ok(self.velocity_from_vorticity(omega)?.gradient_tensor())
    }

    /// `G(z)` with `G(z)·w = (V^N ⋆ K_α)(z) × w`, summed over
    /// `0 < max_j |k_j| <= band`. Returns the real part and the largest
    /// imaginary residual.
    pub fn mollified_kernel_matrix_with_residual(
        &self,
        z: &Vector3<f64>,
        v_hat: &MollifierSpectrum,
        band: usize,
    ) -> Result<(Matrix3<f64>, f64)> {
        let limit = self.grid.modes() / 2;
        if band > limit || band > v_hat.max_band() {
            return Err(Error::BandTooLarge {
                band,
                limit: limit.min(v_hat.max_band()),
            });
        }
        let b = band as i64;
        let mut acc = [[Complex64::default(); 3]; 3];
        for k3 in -b..=b {
            for k2 in -b..=b {
                for k1 in -b..=b {
                    let k = [k1, k2, k3];
                    if k == [0, 0, 0] {
                        continue;
                    }
                    let kf = k.map(|x| x as f64);
                    let phase = kf[0] * z[0] + kf[1] * z[1] + kf[2] * z[2];
                    let s = v_hat.at(k) * self.multiplier_at(k);
                    // e^{ik·z} · i · s
                    let coef = Complex64::from_polar(s, phase) * Complex64::new(0.0, 1.0);
                    // [k]× rows: (0, −k3, k2), (k3, 0, −k1), (−k2, k1, 0)
                    acc[0][1] -= coef * kf[2];
                    acc[0][2] += coef * kf[1];
                    acc[1][0] += coef * kf[2];
                    acc[1][2] -= coef * kf[0];
                    acc[2][0] -= coef * kf[1];
                    acc[2][1] += coef * kf[0];
                }
            }
        }
        let mut residual = 0.0f64;
        let m = Matrix3::from_fn(|i, j| {
            residual = residual.max(acc[i][j].im.abs() / TORUS_VOLUME);
            acc[i][j].re / TORUS_VOLUME
        });
        Ok((m, residual))
    }

    pub fn mollified_kernel_matrix(
        &self,
        z: &Vector3<f64>,
        v_hat: &MollifierSpectrum,
        band: usize,
    ) -> Result<Matrix3<f64>> {
        self.mollified_kernel_matrix_with_residual(z, v_hat, band)
            .map(|(m, _)| m)
    }
}

/// Coefficients `i k × F̂_k`.
pub fn curl(f: &SpectralField) -> SpectralField {
    let g = *f.grid();
    f.map_modes(|idx, c| {
        let k = g.unflat(idx).map(|nj| g.derivative_wavenumber(nj));
        cross_ik(k, &c, 1.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mollifier::MollifierSpec;
    use crate::spectral::PhysicalField;

    fn grid(m: usize) -> GridSpec {
        GridSpec::new(m).unwrap()
    }

    fn cos_x1(g: GridSpec) -> SpectralField {
        PhysicalField::from_fn(g, |x| Vector3::new(0.0, 0.0, x[0].cos())).to_spectral()
    }

    #[test]
    fn multiplier_bounds_and_monotonicity() {
        let k = AlphaKernel::new(0.5, grid(16)).unwrap();
        let g = *k.grid();
        assert_eq!(k.multipliers()[0], 0.0);
        for idx in 1..g.len() {
            let kv = g.wavevector(idx);
            let k2 = (kv[0] * kv[0] + kv[1] * kv[1] + kv[2] * kv[2]) as f64;
            let m = k.multipliers()[idx];
            assert!(m > 0.0);
            assert!(m <= (1.0 / k2).min(1.0 / (0.25 * k2 * k2)));
            assert!(multiplier(0.7, k2) < m);
        }
    }

    #[test]
    fn zero_vorticity_gives_zero_velocity() {
        let k = AlphaKernel::new(1.0, grid(8)).unwrap();
        let u = k.velocity_from_vorticity(&SpectralField::zeros(grid(8))).unwrap();
        assert_eq!(u.max_abs(), 0.0);
        assert_eq!(k.velocity_gradient(&SpectralField::zeros(grid(8))).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn single_mode_velocity_and_curl() {
        let g = grid(16);
        let k = AlphaKernel::new(1.0, g).unwrap();
        let u = k.velocity_from_vorticity(&cos_x1(g)).unwrap().to_physical();
        for idx in 0..g.len() {
            let x = g.node(idx);
            let expect = Vector3::new(0.0, 0.5 * x[0].sin(), 0.0);
            assert!((u.at(idx) - expect).norm() < 1e-14);
        }
        // eighth-order centered differences of the samples on a finer grid
        let fine = grid(64);
        let kf = AlphaKernel::new(1.0, fine).unwrap();
        let uf = kf.velocity_from_vorticity(&cos_x1(fine)).unwrap().to_physical();
        let h = fine.spacing();
        let m = fine.modes() as i64;
        let mut worst = 0.0f64;
        for idx in 0..fine.len() {
            let n = fine.unflat(idx);
            let at = |off: i64| {
                let n1 = ((n[0] as i64 + off).rem_euclid(m)) as usize;
                uf.at(fine.flat([n1, n[1], n[2]]))[1]
            };
            let d = (672.0 * (at(1) - at(-1)) - 168.0 * (at(2) - at(-2))
                + 32.0 * (at(3) - at(-3))
                - 3.0 * (at(4) - at(-4)))
                / (840.0 * h);
            // curl u = (0, 0, ∂₁u₂) here
            worst = worst.max((d - 0.5 * fine.node(idx)[0].cos()).abs());
        }
        assert!(worst < 1e-10, "{worst}");
        // spectrally, the identity holds to round-off
        let w = curl(&k.velocity_from_vorticity(&cos_x1(g)).unwrap()).to_physical();
        for idx in 0..g.len() {
            let x = g.node(idx);
            assert!((w.at(idx) - Vector3::new(0.0, 0.0, 0.5 * x[0].cos())).norm() < 1e-10);
        }
    }

    #[test]
    fn curl_examples() {
        let g = grid(8);
        let c = PhysicalField::from_fn(g, |_| Vector3::new(1.0, 2.0, 3.0)).to_spectral();
        assert_eq!(curl(&c).max_abs(), 0.0);
        let u = PhysicalField::from_fn(g, |x| Vector3::new(0.0, x[0].sin(), 0.0)).to_spectral();
        let w = curl(&u).to_physical();
        for idx in 0..g.len() {
            let x = g.node(idx);
            assert!((w.at(idx) - Vector3::new(0.0, 0.0, x[0].cos())).norm() < 1e-14);
        }
    }

    #[test]
    fn velocity_gradient_single_mode() {
        let g = grid(16);
        let k = AlphaKernel::new(1.0, g).unwrap();
        let t = k.velocity_gradient(&cos_x1(g)).unwrap();
        for idx in 0..g.len() {
            let x = g.node(idx);
            let m = t.at(idx);
            for i in 0..3 {
                for j in 0..3 {
                    let expect = if (i, j) == (1, 0) { 0.5 * x[0].cos() } else { 0.0 };
                    assert!((m[(i, j)] - expect).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn kernel_matrix_is_antisymmetric_and_real() {
        let g = grid(16);
        let k = AlphaKernel::new(0.5, g).unwrap();
        let spec = MollifierSpec::new(64, 0.25).unwrap();
        let vh = spec.spectrum(5);
        let (m0, _) = k.mollified_kernel_matrix_with_residual(&Vector3::zeros(), &vh, 5).unwrap();
        assert!(m0.amax() < 1e-15);
        for z in [Vector3::new(0.3, 1.1, -2.0), Vector3::new(4.0, 0.5, 6.0)] {
            let (m, res) = k.mollified_kernel_matrix_with_residual(&z, &vh, 5).unwrap();
            assert!((m + m.transpose()).amax() < 1e-12);
            assert!(res < 1e-12);
            assert_eq!(m * Vector3::zeros(), Vector3::zeros());
        }
        assert!(k.mollified_kernel_matrix(&Vector3::zeros(), &vh, 9).is_err());
    }
}
