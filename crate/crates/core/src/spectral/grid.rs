use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of the periodic box.
pub const DOMAIN_LENGTH: f64 = 2.0 * PI;

/// Volume of the torus `[0, 2π)³`.
pub const TORUS_VOLUME: f64 = DOMAIN_LENGTH * DOMAIN_LENGTH * DOMAIN_LENGTH;

/// Uniform `M³` grid on the 2π-periodic torus.
///
/// Flat indices run x₁-fastest: `n = n₁ + M (n₂ + M n₃)`. The FFT index `n`
/// along an axis maps to the signed wavenumber `n` for `n < M/2` and `n − M`
/// otherwise, so the Nyquist index `M/2` carries `k = −M/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    modes: usize,
    dealias_fraction: f64,
}

impl GridSpec {
    pub const DEFAULT_DEALIAS_FRACTION: f64 = 2.0 / 3.0;

    pub fn new(modes: usize) -> Result<Self> {
        Self::with_dealias(modes, Self::DEFAULT_DEALIAS_FRACTION)
    }

    pub fn with_dealias(modes: usize, dealias_fraction: f64) -> Result<Self> {
        if modes < 4 || modes % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "modes per axis must be even and >= 4, got {modes}"
            )));
        }
        if !(dealias_fraction > 0.0 && dealias_fraction <= 1.0) {
            return Err(Error::InvalidGrid(format!(
                "dealias fraction must lie in (0, 1], got {dealias_fraction}"
            )));
        }
        Ok(Self {
            modes,
            dealias_fraction,
        })
    }

    #[inline]
    pub fn modes(&self) -> usize {
        self.modes
    }

    #[inline]
    pub fn dealias_fraction(&self) -> f64 {
        self.dealias_fraction
    }

    /// Number of grid nodes, `M³`.
    #[inline]
    pub fn len(&self) -> usize {
        self.modes * self.modes * self.modes
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        DOMAIN_LENGTH / self.modes as f64
    }

    /// Largest `max_j |k_j|` kept by [`SpectralField::dealiased`](super::SpectralField::dealiased).
    pub fn dealias_band(&self) -> usize {
        (self.dealias_fraction * (self.modes / 2) as f64 + 1e-9).floor() as usize
    }

    /// Signed wavenumber of FFT index `n` along one axis.
    #[inline]
    pub fn wavenumber(&self, n: usize) -> i64 {
        let m = self.modes;
        if n < m / 2 {
            n as i64
        } else {
            n as i64 - m as i64
        }
    }

    /// Wavenumber used by odd-order derivatives; zero on the Nyquist index
    /// so that derivatives of real fields stay real.
    #[inline]
    pub fn derivative_wavenumber(&self, n: usize) -> f64 {
        if n == self.modes / 2 {
            0.0
        } else {
            self.wavenumber(n) as f64
        }
    }

    #[inline]
    pub fn flat(&self, n: [usize; 3]) -> usize {
        n[0] + self.modes * (n[1] + self.modes * n[2])
    }

    #[inline]
    pub fn unflat(&self, idx: usize) -> [usize; 3] {
        // 32-bit division is several times cheaper and grids are far
        // smaller than 2³² nodes
        let (i, m) = (idx as u32, self.modes as u32);
        let q = i / m;
        [(i - q * m) as usize, (q % m) as usize, (q / m) as usize]
    }

    #[inline]
    pub fn wavevector(&self, idx: usize) -> [i64; 3] {
        let n = self.unflat(idx);
        [
            self.wavenumber(n[0]),
            self.wavenumber(n[1]),
            self.wavenumber(n[2]),
        ]
    }

    /// Flat index of wavevector `k`, if every `|k_j| <= M/2`.
    pub fn index_of(&self, k: [i64; 3]) -> Option<usize> {
        let m = self.modes as i64;
        let mut n = [0usize; 3];
        for j in 0..3 {
            if k[j].abs() > m / 2 {
                return None;
            }
            n[j] = k[j].rem_euclid(m) as usize;
        }
        Some(self.flat(n))
    }

    /// Flat index of `−k` for the wavevector stored at `idx`.
    #[inline]
    pub fn conjugate_index(&self, idx: usize) -> usize {
        let m = self.modes;
        let n = self.unflat(idx);
        self.flat([(m - n[0]) % m, (m - n[1]) % m, (m - n[2]) % m])
    }

    pub fn is_nyquist(&self, idx: usize) -> bool {
        self.unflat(idx).iter().any(|&n| n == self.modes / 2)
    }

    /// Physical coordinates of grid node `idx`.
    #[inline]
    pub fn node(&self, idx: usize) -> Vector3<f64> {
        let n = self.unflat(idx);
        let h = self.spacing();
        Vector3::new(n[0] as f64 * h, n[1] as f64 * h, n[2] as f64 * h)
    }
}

/// Wrap a coordinate into `[0, 2π)`.
#[inline]
pub fn wrap_coordinate(x: f64) -> f64 {
    let w = x.rem_euclid(DOMAIN_LENGTH);
    // rem_euclid can return DOMAIN_LENGTH itself for tiny negative inputs
    if w >= DOMAIN_LENGTH {
        0.0
    } else {
        w
    }
}

#[inline]
pub fn wrap_point(x: &Vector3<f64>) -> Vector3<f64> {
    x.map(wrap_coordinate)
}

/// Minimum-image displacement: each component mapped into `[−π, π)`.
#[inline]
pub fn minimum_image(x: &Vector3<f64>) -> Vector3<f64> {
    x.map(|c| {
        let w = (c + PI).rem_euclid(DOMAIN_LENGTH) - PI;
        if w >= PI {
            w - DOMAIN_LENGTH
        } else {
            w
        }
    })
}

/// Geodesic distance from `x` to the origin on the torus.
#[inline]
pub fn torus_norm(x: &Vector3<f64>) -> f64 {
    minimum_image(x).norm()
}
