//! Exact band-limited Fourier sums at scattered points.
//!
//! `deposit` forms `S_k = Σ_i q_i e^{−ik·X_i}` on the half-space `k₃ ≥ 0` of
//! the cube `max_j |k_j| <= band`; `Evaluator` sums a real field and its
//! gradient `Σ_k c_k e^{ik·x}` at arbitrary points. Both are written over
//! fixed-width lane arrays so the compiler can vectorize them.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::spectral::CVec3;

pub(crate) const LANES: usize = 8;
type Lane = [f64; LANES];

/// Particles per deposit chunk. Chunks are summed in index order, so the
/// result does not depend on how rayon schedules them.
const DEPOSIT_CHUNK: usize = 256;

/// Points per evaluation task.
const EVAL_CHUNK: usize = 64;

#[inline]
fn padded(n: usize) -> usize {
    n.div_ceil(LANES) * LANES
}

/// Half-space coefficient table from [`deposit`].
#[derive(Clone, Debug, PartialEq)]
pub struct HalfSpace {
    band: usize,
    row: usize,
    // [k3 ∈ 0..=b][k2 ∈ −b..=b][part ∈ 0..6][k1 ∈ −b..=b, padded]
    // part = 2·component + (0 for re, 1 for im)
    data: Vec<f64>,
}

impl HalfSpace {
    fn zeros(band: usize) -> Self {
        let row = padded(2 * band + 1);
        let len = (band + 1) * (2 * band + 1) * 6 * row;
        Self {
            band,
            row,
            data: vec![0.0; len],
        }
    }

    #[inline]
    pub fn band(&self) -> usize {
        self.band
    }

    #[inline]
    fn offset(&self, k2: i64, k3: usize) -> usize {
        let b = self.band as i64;
        ((k3 * (2 * self.band + 1)) + (k2 + b) as usize) * 6 * self.row
    }

    /// Coefficient at any `k` in the cube, using `S_{−k} = conj(S_k)`.
    pub fn get(&self, k: [i64; 3]) -> CVec3 {
        let b = self.band as i64;
        debug_assert!(k.iter().all(|kj| kj.abs() <= b));
        let (kk, conj) = if k[2] < 0 { ([-k[0], -k[1], -k[2]], true) } else { (k, false) };
        let base = self.offset(kk[1], kk[2] as usize);
        let i1 = (kk[0] + b) as usize;
        let mut out = [Complex64::default(); 3];
        for (c, slot) in out.iter_mut().enumerate() {
            let re = self.data[base + (2 * c) * self.row + i1];
            let im = self.data[base + (2 * c + 1) * self.row + i1];
            *slot = if conj { Complex64::new(re, -im) } else { Complex64::new(re, im) };
        }
        out
    }

    fn add_assign(&mut self, other: &HalfSpace) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `S_k = Σ_i q_i e^{−ik·X_i}` for `k₃ ≥ 0`, summed in slice order.
pub fn deposit(band: usize, positions: &[Vector3<f64>], charges: &[Vector3<f64>]) -> HalfSpace {
    assert_eq!(positions.len(), charges.len());
    let partials: Vec<HalfSpace> = positions
        .par_chunks(DEPOSIT_CHUNK)
        .zip(charges.par_chunks(DEPOSIT_CHUNK))
        .map(|(x, q)| {
            let mut acc = HalfSpace::zeros(band);
            deposit_serial(&mut acc, x, q);
            acc
        })
        .collect();
    let mut iter = partials.into_iter();
    let mut total = iter.next().unwrap_or_else(|| HalfSpace::zeros(band));
    for p in iter {
        total.add_assign(&p);
    }
    total
}

/// `e^{ikx}` for `k = 0..=band` by repeated multiplication; the error grows
/// like `k` ulps, far below what the sums need.
#[inline]
fn powers(x: f64, out: &mut [(f64, f64)]) {
    let (s, c) = x.sin_cos();
    let mut z = (1.0, 0.0);
    for slot in out.iter_mut() {
        *slot = z;
        z = (z.0 * c - z.1 * s, z.0 * s + z.1 * c);
    }
}

/// Particles sharing one pass over the table. Each entry still receives
/// its terms in particle order, so the result matches a one-at-a-time sum.
const PASS: usize = 4;

fn deposit_serial(acc: &mut HalfSpace, xs: &[Vector3<f64>], qs: &[Vector3<f64>]) {
    let band = acc.band;
    let b = band as i64;
    let row = acc.row;
    let n1 = 2 * band + 1;
    let mut c1r: [Vec<f64>; PASS] = std::array::from_fn(|_| vec![0.0; row]);
    let mut c1i = c1r.clone();
    let mut e2 = vec![[(0.0, 0.0); PASS]; n1];
    let mut e3 = vec![[(0.0, 0.0); PASS]; band + 1];
    let mut pw = [vec![(0.0, 0.0); band + 1], vec![(0.0, 0.0); band + 1], vec![(0.0, 0.0); band + 1]];
    for (xp, qp) in xs.chunks(PASS).zip(qs.chunks(PASS)) {
        // unused slots carry zero charge; their phases stay finite
        let mut qv = [[0.0; PASS]; 3];
        for (p, (x, q)) in xp.iter().zip(qp).enumerate() {
            powers(x[0], &mut pw[0]);
            powers(x[1], &mut pw[1]);
            powers(x[2], &mut pw[2]);
            for (i, k) in (-b..=b).enumerate() {
                let (c, s) = pw[0][k.unsigned_abs() as usize];
                let s = if k < 0 { -s } else { s };
                c1r[p][i] = c;
                c1i[p][i] = -s;
                let (c, s) = pw[1][k.unsigned_abs() as usize];
                let s = if k < 0 { -s } else { s };
                e2[i][p] = (c, -s);
            }
            for k in 0..=band {
                let (c, s) = pw[2][k];
                e3[k][p] = (c, -s);
            }
            for a in 0..3 {
                qv[a][p] = q[a];
            }
        }
        let used = xp.len();
        let mut base = 0;
        for e3k in e3.iter() {
            for e2k in e2.iter() {
                let mut rr = [0.0; PASS];
                let mut ri = [0.0; PASS];
                for p in 0..PASS {
                    let (e3r, e3i) = e3k[p];
                    let (e2r, e2i) = e2k[p];
                    rr[p] = e3r * e2r - e3i * e2i;
                    ri[p] = e3r * e2i + e3i * e2r;
                }
                let chunk = &mut acc.data[base..base + 6 * row];
                let (p0, rest) = chunk.split_at_mut(row);
                let (p1, rest) = rest.split_at_mut(row);
                let (p2, rest) = rest.split_at_mut(row);
                let (p3, rest) = rest.split_at_mut(row);
                let (p4, p5) = rest.split_at_mut(row);
                if used == PASS {
                    for i in 0..row {
                        let (mut a0, mut a1, mut a2) = (p0[i], p1[i], p2[i]);
                        let (mut a3, mut a4, mut a5) = (p3[i], p4[i], p5[i]);
                        for p in 0..PASS {
                            let er = rr[p].mul_add(c1r[p][i], -ri[p] * c1i[p][i]);
                            let ei = rr[p].mul_add(c1i[p][i], ri[p] * c1r[p][i]);
                            a0 = qv[0][p].mul_add(er, a0);
                            a1 = qv[0][p].mul_add(ei, a1);
                            a2 = qv[1][p].mul_add(er, a2);
                            a3 = qv[1][p].mul_add(ei, a3);
                            a4 = qv[2][p].mul_add(er, a4);
                            a5 = qv[2][p].mul_add(ei, a5);
                        }
                        (p0[i], p1[i], p2[i]) = (a0, a1, a2);
                        (p3[i], p4[i], p5[i]) = (a3, a4, a5);
                    }
                } else {
                    for i in 0..row {
                        for p in 0..used {
                            let er = rr[p].mul_add(c1r[p][i], -ri[p] * c1i[p][i]);
                            let ei = rr[p].mul_add(c1i[p][i], ri[p] * c1r[p][i]);
                            p0[i] = qv[0][p].mul_add(er, p0[i]);
                            p1[i] = qv[0][p].mul_add(ei, p1[i]);
                            p2[i] = qv[1][p].mul_add(er, p2[i]);
                            p3[i] = qv[1][p].mul_add(ei, p3[i]);
                            p4[i] = qv[2][p].mul_add(er, p4[i]);
                            p5[i] = qv[2][p].mul_add(ei, p5[i]);
                        }
                    }
                }
                base += 6 * row;
            }
        }
    }
}

/// Value and gradient `(u, ∂_j u_i)` of a real band-limited field.
pub type PointValue = (Vector3<f64>, Matrix3<f64>);

/// Precomputed coefficient layout for evaluating a real field
/// `u(x) = Σ_k c_k e^{ik·x}` and its gradient at scattered points.
#[derive(Clone, Debug)]
pub struct Evaluator {
    band: usize,
    // [k2 ∈ −b..=b][k1 ∈ −b..=b][k3 ∈ 0..=b][12]: w·c (re, im per component)
    // followed by w·k3·c, with w = 1 on k3 = 0 and 2 above it
    table: Vec<f64>,
}

impl Evaluator {
    /// `coeff(k)` must be Hermitian, `coeff(−k) = conj(coeff(k))`.
    pub fn new(band: usize, coeff: impl Fn([i64; 3]) -> CVec3) -> Self {
        let b = band as i64;
        let mut table = Vec::with_capacity((2 * band + 1).pow(2) * (band + 1) * 12);
        for k2 in -b..=b {
            for k1 in -b..=b {
                for k3 in 0..=b {
                    let w = if k3 == 0 { 1.0 } else { 2.0 };
                    let c = coeff([k1, k2, k3]);
                    for z in &c {
                        table.push(w * z.re);
                        table.push(w * z.im);
                    }
                    for z in &c {
                        table.push(w * k3 as f64 * z.re);
                        table.push(w * k3 as f64 * z.im);
                    }
                }
            }
        }
        Self { band, table }
    }

    #[inline]
    pub fn band(&self) -> usize {
        self.band
    }

    pub fn eval(&self, points: &[Vector3<f64>]) -> Vec<PointValue> {
        let mut out = vec![(Vector3::zeros(), Matrix3::zeros()); points.len()];
        out.par_chunks_mut(EVAL_CHUNK)
            .zip(points.par_chunks(EVAL_CHUNK))
            .for_each(|(o, p)| {
                for (ob, pb) in o.chunks_mut(LANES).zip(p.chunks(LANES)) {
                    eval_block(self, pb, ob);
                }
            });
        out
    }
}

fn eval_block(ev: &Evaluator, pts: &[Vector3<f64>], out: &mut [PointValue]) {
    let band = ev.band;
    let b = band as i64;
    let n = 2 * band + 1;
    // lanes past pts.len() evaluate at the origin and are discarded
    let mut xs = [[0.0; LANES]; 3];
    for (l, p) in pts.iter().enumerate() {
        for a in 0..3 {
            xs[a][l] = p[a];
        }
    }
    let mut pw = vec![(0.0, 0.0); band + 1];
    let mut table = vec![([0.0; LANES], [0.0; LANES]); band + 1];
    let mut phases = |axis: usize| -> Vec<(Lane, Lane)> {
        for l in 0..LANES {
            powers(xs[axis][l], &mut pw);
            for (k, &(c, s)) in pw.iter().enumerate() {
                table[k].0[l] = c;
                table[k].1[l] = s;
            }
        }
        table.clone()
    };
    let signed = |t: &[(Lane, Lane)]| -> Vec<(Lane, Lane)> {
        (-b..=b)
            .map(|k| {
                let (re, im) = t[k.unsigned_abs() as usize];
                (re, if k < 0 { im.map(|v| -v) } else { im })
            })
            .collect()
    };
    let e1 = signed(&phases(0));
    let e2 = signed(&phases(1));
    let e3 = phases(2);

    let mut u = [[0.0; LANES]; 3];
    let mut grad = [[[0.0; LANES]; 3]; 3];
    let stride = (band + 1) * 12;
    for (i2, k2) in (-b..=b).enumerate() {
        let (e2r, e2i) = &e2[i2];
        for (i1, k1) in (-b..=b).enumerate() {
            let rowc = &ev.table[(i2 * n + i1) * stride..(i2 * n + i1 + 1) * stride];
            // s[p] for p = 0..6 accumulates Σ_{k3} coeff_p e^{ik3 x3}
            let mut sr = [[0.0; LANES]; 6];
            let mut si = [[0.0; LANES]; 6];
            for (k3, (e3r, e3i)) in e3.iter().enumerate() {
                let c = &rowc[k3 * 12..k3 * 12 + 12];
                for p in 0..6 {
                    let cr = c[2 * p];
                    let ci = c[2 * p + 1];
                    for l in 0..LANES {
                        sr[p][l] = cr.mul_add(e3r[l], (-ci).mul_add(e3i[l], sr[p][l]));
                        si[p][l] = cr.mul_add(e3i[l], ci.mul_add(e3r[l], si[p][l]));
                    }
                }
            }
            let (e1r, e1i) = &e1[i1];
            let k1f = k1 as f64;
            let k2f = k2 as f64;
            for l in 0..LANES {
                let er = e1r[l].mul_add(e2r[l], -e1i[l] * e2i[l]);
                let ei = e1r[l].mul_add(e2i[l], e1i[l] * e2r[l]);
                for c in 0..3 {
                    let zr = sr[c][l].mul_add(er, -si[c][l] * ei);
                    let zi = sr[c][l].mul_add(ei, si[c][l] * er);
                    let yi = sr[3 + c][l].mul_add(ei, si[3 + c][l] * er);
                    u[c][l] += zr;
                    grad[c][0][l] = (-k1f).mul_add(zi, grad[c][0][l]);
                    grad[c][1][l] = (-k2f).mul_add(zi, grad[c][1][l]);
                    grad[c][2][l] -= yi;
                }
            }
        }
    }
    for (l, slot) in out.iter_mut().enumerate() {
        slot.0 = Vector3::new(u[0][l], u[1][l], u[2][l]);
        slot.1 = Matrix3::from_fn(|i, j| grad[i][j][l]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_deposit(k: [i64; 3], xs: &[Vector3<f64>], qs: &[Vector3<f64>]) -> CVec3 {
        let mut out = [Complex64::default(); 3];
        for (x, q) in xs.iter().zip(qs) {
            let ph = -(k[0] as f64 * x[0] + k[1] as f64 * x[1] + k[2] as f64 * x[2]);
            let e = Complex64::from_polar(1.0, ph);
            for c in 0..3 {
                out[c] += e * q[c];
            }
        }
        out
    }

    fn points(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut s = seed;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        (0..n)
            .map(|_| Vector3::new(next(), next(), next()) * std::f64::consts::TAU)
            .collect()
    }

    #[test]
    fn deposit_matches_naive_sum() {
        let xs = points(300, 1);
        let qs: Vec<_> = points(300, 2).into_iter().map(|v| v - Vector3::repeat(3.0)).collect();
        let band = 4;
        let h = deposit(band, &xs, &qs);
        for k in [[0, 0, 0], [1, 0, 0], [-3, 2, 1], [4, -4, 4], [2, 1, -3], [-1, -4, 0]] {
            let a = h.get(k);
            let e = naive_deposit(k, &xs, &qs);
            for c in 0..3 {
                assert!((a[c] - e[c]).norm() < 1e-11, "{k:?}");
            }
        }
    }

    #[test]
    fn evaluator_matches_naive_sum() {
        let band = 3;
        let coeff = |k: [i64; 3]| -> CVec3 {
            // g(k) + conj(g(−k)) is Hermitian
            let g = |k: [i64; 3], c: i64| {
                let a = (k[0] * 7 + k[1] * 3 + k[2] * 11 + c) as f64 + 0.1 * (k[0] * k[1]) as f64;
                Complex64::from_polar(0.1, a)
            };
            let f = |k: [i64; 3], c: i64| g(k, c) + g([-k[0], -k[1], -k[2]], c).conj();
            [f(k, 0), f(k, 1), f(k, 2)]
        };
        let ev = Evaluator::new(band, coeff);
        let xs = points(13, 5);
        let vals = ev.eval(&xs);
        let b = band as i64;
        for (x, (u, g)) in xs.iter().zip(&vals) {
            let mut eu = Vector3::zeros();
            let mut eg = Matrix3::zeros();
            for k3 in -b..=b {
                for k2 in -b..=b {
                    for k1 in -b..=b {
                        let k = [k1, k2, k3];
                        let ph = k1 as f64 * x[0] + k2 as f64 * x[1] + k3 as f64 * x[2];
                        let e = Complex64::from_polar(1.0, ph);
                        let c = coeff(k);
                        for i in 0..3 {
                            let z = c[i] * e;
                            eu[i] += z.re;
                            for j in 0..3 {
                                eg[(i, j)] += (z * Complex64::new(0.0, k[j] as f64)).re;
                            }
                        }
                    }
                }
            }
            assert!((u - eu).amax() < 1e-12);
            assert!((g - eg).amax() < 1e-11);
        }
    }

    #[test]
    fn deposit_is_order_independent_of_chunking() {
        let xs = points(700, 3);
        let qs = points(700, 4);
        let a = deposit(3, &xs, &qs);
        let b = deposit(3, &xs, &qs);
        assert_eq!(a, b);
    }
}
