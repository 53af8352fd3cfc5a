//! Three-dimensional complex FFTs on `M³` grids, built from 1D `rustfft`
//! plans applied axis by axis.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Direction {
    Forward,
    Inverse,
}

thread_local! {
    static ROTATED: std::cell::RefCell<Vec<Complex64>> = const { std::cell::RefCell::new(Vec::new()) };
}

pub(crate) struct Fft3 {
    m: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

pub(crate) fn plan(m: usize) -> Arc<Fft3> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Fft3>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut cache = cache.lock().expect("fft plan cache poisoned");
    cache
        .entry(m)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Fft3 {
                m,
                forward: planner.plan_fft_forward(m),
                inverse: planner.plan_fft_inverse(m),
            })
        })
        .clone()
}

impl Fft3 {
    /// Unnormalized in-place transform of an `M³` array (x₁ fastest).
    ///
    /// Each pass transforms the contiguous axis and then rotates the axes
    /// `(x₁, x₂, x₃) → (x₂, x₃, x₁)`; three passes restore the layout.
    pub(crate) fn process(&self, data: &mut [Complex64], dir: Direction) {
        let m = self.m;
        debug_assert_eq!(data.len(), m * m * m);
        let fft = match dir {
            Direction::Forward => &self.forward,
            Direction::Inverse => &self.inverse,
        };
        ROTATED.with_borrow_mut(|rotated| {
            rotated.resize(data.len(), Complex64::default());
            self.rotate_passes(data, rotated, fft.as_ref());
        });
    }

    fn rotate_passes(&self, data: &mut [Complex64], rotated: &mut [Complex64], fft: &dyn Fft<f64>) {
        let m = self.m;
        let plane = m * m;
        let scratch_len = fft.get_inplace_scratch_len();
        for _ in 0..3 {
            data.par_chunks_mut(plane).for_each_init(
                || vec![Complex64::default(); scratch_len],
                |scratch, chunk| fft.process_with_scratch(chunk, scratch),
            );
            // `block` consecutive x₁ values share a cache line of the source
            let block = [4, 2, 1].into_iter().find(|b| m % b == 0).unwrap_or(1);
            rotated.par_chunks_mut(plane * block).enumerate().for_each(|(b, out)| {
                let n1 = b * block;
                for n3 in 0..m {
                    for n2 in 0..m {
                        let src = &data[n1 + m * n2 + plane * n3..][..block];
                        for (j, v) in src.iter().enumerate() {
                            out[j * plane + n2 + m * n3] = *v;
                        }
                    }
                }
            });
            data.copy_from_slice(rotated);
        }
    }

    /// Forward transforms of two real arrays with one complex FFT, normalized
    /// so the zero mode is the mean.
    pub(crate) fn forward_real_pair(
        &self,
        a: &[f64],
        b: &[f64],
    ) -> (Vec<Complex64>, Vec<Complex64>) {
        let m = self.m;
        let len = m * m * m;
        let mut z: Vec<Complex64> = a
            .iter()
            .zip(b)
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect();
        self.process(&mut z, Direction::Forward);
        let scale = 1.0 / len as f64;
        let mut fa = vec![Complex64::default(); len];
        let mut fb = vec![Complex64::default(); len];
        for (idx, c) in conj_indices(m) {
            let zk = z[idx];
            let zc = z[c].conj();
            fa[idx] = (zk + zc) * (0.5 * scale);
            // (zk - zc) / (2i)
            let d = (zk - zc) * (0.5 * scale);
            fb[idx] = Complex64::new(d.im, -d.re);
        }
        (fa, fb)
    }

    pub(crate) fn forward_real(&self, a: &[f64]) -> Vec<Complex64> {
        let len = a.len();
        let mut z: Vec<Complex64> = a.iter().map(|&re| Complex64::new(re, 0.0)).collect();
        self.process(&mut z, Direction::Forward);
        let scale = 1.0 / len as f64;
        z.iter_mut().for_each(|c| *c *= scale);
        z
    }

    /// Inverse transforms of two Hermitian spectra packed into one FFT.
    pub(crate) fn inverse_real_pair(
        &self,
        fa: &[Complex64],
        fb: &[Complex64],
    ) -> (Vec<f64>, Vec<f64>) {
        let mut z: Vec<Complex64> = fa
            .iter()
            .zip(fb)
            .map(|(&x, &y)| x + Complex64::new(-y.im, y.re))
            .collect();
        self.process(&mut z, Direction::Inverse);
        z.into_iter().map(|c| (c.re, c.im)).unzip()
    }

    pub(crate) fn inverse_real(&self, fa: &[Complex64]) -> Vec<f64> {
        let mut z = fa.to_vec();
        self.process(&mut z, Direction::Inverse);
        z.into_iter().map(|c| c.re).collect()
    }
}

/// `(idx, index of −k)` over the grid in storage order.
fn conj_indices(m: usize) -> impl Iterator<Item = (usize, usize)> {
    let flip = move |n: usize| if n == 0 { 0 } else { m - n };
    (0..m).flat_map(move |n2| {
        (0..m).flat_map(move |n1| {
            (0..m).map(move |n0| (n0 + m * (n1 + m * n2), flip(n0) + m * (flip(n1) + m * flip(n2))))
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_dft() {
        let m = 4;
        let len = m * m * m;
        let data: Vec<Complex64> = (0..len)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut fast = data.clone();
        plan(m).process(&mut fast, Direction::Forward);
        for kidx in 0..len {
            let k = [kidx % m, (kidx / m) % m, kidx / (m * m)];
            let mut acc = Complex64::default();
            for (xidx, v) in data.iter().enumerate() {
                let x = [xidx % m, (xidx / m) % m, xidx / (m * m)];
                let phase = -2.0 * std::f64::consts::PI
                    * (k[0] * x[0] + k[1] * x[1] + k[2] * x[2]) as f64
                    / m as f64;
                acc += v * Complex64::from_polar(1.0, phase);
            }
            assert!((acc - fast[kidx]).norm() < 1e-12);
        }
    }

    #[test]
    fn paired_real_transforms_match_single() {
        let m = 6;
        let len = m * m * m;
        let a: Vec<f64> = (0..len).map(|i| (i as f64 * 0.3).sin()).collect();
        let b: Vec<f64> = (0..len).map(|i| (i as f64 * 0.7).cos() + 0.2).collect();
        let p = plan(m);
        let (fa, fb) = p.forward_real_pair(&a, &b);
        let fa1 = p.forward_real(&a);
        let fb1 = p.forward_real(&b);
        for i in 0..len {
            assert!((fa[i] - fa1[i]).norm() < 1e-14);
            assert!((fb[i] - fb1[i]).norm() < 1e-14);
        }
        let (ra, rb) = p.inverse_real_pair(&fa, &fb);
        for i in 0..len {
            assert!((ra[i] - a[i]).abs() < 1e-13);
            assert!((rb[i] - b[i]).abs() < 1e-13);
        }
    }
}
