//! Kraichnan noise basis on the torus.
//!
//! A noise mode is `sigma_{k,j}(x) = theta_{k,j} a_{k,j} exp(i k.x)` with
//! `k` on the integer lattice, `a_{k,j}` a unit vector orthogonal to `k` and
//! `theta_{k,j}` supported on the shell `n <= |k| <= 2n`. Each mode is driven
//! by a complex Brownian motion with `W^{-k,j} = conj(W^{k,j})`, so the
//! synthesized velocity field is real and divergence-free.

use std::collections::HashMap;
use std::io::Write;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::StreamKey;

/// Integer lattice vector; for `d = 2` the third entry is zero.
pub type LatticeVec = [i32; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SignClass {
    /// First nonzero coordinate is positive.
    Positive,
    Negative,
}

/// Lexicographic half-lattice split. `None` for the origin.
pub fn sign_class(k: LatticeVec) -> Option<SignClass> {
    k.iter().find(|&&c| c != 0).map(|&c| if c > 0 { SignClass::Positive } else { SignClass::Negative })
}

fn negate(k: LatticeVec) -> LatticeVec {
    [-k[0], -k[1], -k[2]]
}

pub fn norm2(k: LatticeVec) -> i64 {
    k.iter().map(|&c| (c as i64) * (c as i64)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct WaveIndex {
    pub k: LatticeVec,
    /// Frame index, `1..=d-1`.
    pub j: u8,
    pub sign: SignClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseMode {
    pub index: WaveIndex,
    pub a: [f64; 3],
    pub theta: f64,
}

impl NoiseMode {
    pub fn k(&self) -> [f64; 3] {
        let k = self.index.k;
        [k[0] as f64, k[1] as f64, k[2] as f64]
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d == 2 || d == 3 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("dimension must be 2 or 3, got {d}")))
    }
}

fn lex_positive(v: &mut [f64; 3]) {
    if let Some(&c) = v.iter().find(|c| c.abs() > 1e-12) {
        if c < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Orthonormal completion of `k/|k|`, evaluated on the positive
/// representative of `{k, -k}` so that `a_{-k,j} = a_{k,j}`.
///
/// In 3D the completion starts from the coordinate axis least aligned with
/// `k` (lowest index on ties); each vector's sign is then fixed so that its
/// first nonzero coordinate is positive.
pub fn build_frame(k: LatticeVec, d: usize) -> Result<Vec<[f64; 3]>> {
    check_dim(d)?;
    if d == 2 && k[2] != 0 {
        return Err(Error::InvalidInput("2D wave vector with nonzero z".into()));
    }
    let kp = match sign_class(k) {
        None => return Err(Error::InvalidInput("zero wave vector has no frame".into())),
        Some(SignClass::Positive) => k,
        Some(SignClass::Negative) => negate(k),
    };
    let kh = normalize([kp[0] as f64, kp[1] as f64, kp[2] as f64]);
    if d == 2 {
        let mut a = [-kh[1], kh[0], 0.0];
        lex_positive(&mut a);
        return Ok(vec![a]);
    }
    let axis = (0..3).min_by(|&i, &j| kp[i].abs().cmp(&kp[j].abs()).then(i.cmp(&j))).expect("three axes");
    let mut e = [0.0; 3];
    e[axis] = 1.0;
    let proj = e[0] * kh[0] + e[1] * kh[1] + e[2] * kh[2];
    let mut a1 = normalize([e[0] - proj * kh[0], e[1] - proj * kh[1], e[2] - proj * kh[2]]);
    let mut a2 = [kh[1] * a1[2] - kh[2] * a1[1], kh[2] * a1[0] - kh[0] * a1[2], kh[0] * a1[1] - kh[1] * a1[0]];
    lex_positive(&mut a1);
    lex_positive(&mut a2);
    Ok(vec![a1, a2])
}

fn on_shell(k: LatticeVec, n: u32) -> bool {
    let r2 = norm2(k);
    let n = n as i64;
    n * n <= r2 && r2 <= 4 * n * n
}

/// Every lattice vector with `n <= |k| <= 2n`, in lexicographic order.
pub fn shell_vectors(n: u32, d: usize) -> Vec<LatticeVec> {
    let m = 2 * n as i32;
    let zr = if d == 3 { -m..=m } else { 0..=0 };
    let mut out = Vec::new();
    for x in -m..=m {
        for y in -m..=m {
            for z in zr.clone() {
                let k = [x, y, z];
                if on_shell(k, n) {
                    out.push(k);
                }
            }
        }
    }
    out
}

/// Lattice shell sums over `n <= |k| <= 2n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShellSums {
    pub n: u32,
    pub d: usize,
    /// `sum |k|^{-d}`
    pub c_n: f64,
    /// `sum |k|^{-5}` (the vector-noise normalization in 3D)
    pub eta_n: f64,
    /// `sum |k|^{-3}`
    pub alpha_n: f64,
}

/// Exact shell sums. Vectors are grouped by `|k|^2` and each radius is
/// weighted by its representation count, so the powers are evaluated once
/// per radius.
pub fn shell_sums(n: u32, d: usize) -> Result<ShellSums> {
    check_dim(d)?;
    if n == 0 {
        return Err(Error::InvalidInput("shell parameter n must be >= 1".into()));
    }
    let mut counts: HashMap<i64, u64> = HashMap::new();
    for k in shell_vectors(n, d) {
        *counts.entry(norm2(k)).or_default() += 1;
    }
    let mut radii: Vec<_> = counts.into_iter().collect();
    radii.sort_unstable();
    let (mut c_n, mut eta_n, mut alpha_n) = (0.0, 0.0, 0.0);
    for (r2, count) in radii {
        let r = (r2 as f64).sqrt();
        let w = count as f64;
        c_n += w * r.powi(-(d as i32));
        eta_n += w * r.powi(-5);
        alpha_n += w * r.powi(-3);
    }
    Ok(ShellSums { n, d, c_n, eta_n, alpha_n })
}

/// `sqrt(d kappa_T / ((d-1) c_n)) |k|^{-d/2}` on the shell, zero off it.
pub fn theta_scalar(k: LatticeVec, n: u32, d: usize, kappa_t: f64) -> Result<f64> {
    let sums = shell_sums(n, d)?;
    theta_scalar_with(k, &sums, kappa_t)
}

fn theta_scalar_with(k: LatticeVec, sums: &ShellSums, kappa_t: f64) -> Result<f64> {
    if !(kappa_t > 0.0) {
        return Err(Error::InvalidInput(format!("kappa_T must be positive, got {kappa_t}")));
    }
    if !on_shell(k, sums.n) {
        return Ok(0.0);
    }
    let d = sums.d as f64;
    let r = (norm2(k) as f64).sqrt();
    Ok((d * kappa_t / ((d - 1.0) * sums.c_n)).sqrt() * r.powf(-d / 2.0))
}

/// `sqrt(chi) |k|^{-5/2}` on the shell, zero off it.
pub fn theta_vector(k: LatticeVec, n: u32, chi: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput("shell parameter n must be >= 1".into()));
    }
    if !(chi > 0.0) {
        return Err(Error::InvalidInput(format!("chi must be positive, got {chi}")));
    }
    if !on_shell(k, n) {
        return Ok(0.0);
    }
    let r = (norm2(k) as f64).sqrt();
    Ok(chi.sqrt() * r.powf(-2.5))
}

/// A conjugation-closed set of noise modes.
#[derive(Debug, Clone)]
pub struct NoiseBasis {
    d: usize,
    modes: Vec<NoiseMode>,
    partner: Vec<usize>,
    positive: Vec<usize>,
}

impl NoiseBasis {
    /// Passive-scalar noise with eddy diffusivity `kappa_t` on shell `n`.
    pub fn scalar(d: usize, n: u32, kappa_t: f64) -> Result<Self> {
        let sums = shell_sums(n, d)?;
        let mut modes = Vec::new();
        for k in shell_vectors(n, d) {
            let theta = theta_scalar_with(k, &sums, kappa_t)?;
            push_frame_modes(&mut modes, k, d, theta)?;
        }
        Self::from_modes(d, modes)
    }

    /// Passive-vector (3D) noise with intensity `chi` on shell `n`.
    pub fn vector(n: u32, chi: f64) -> Result<Self> {
        let mut modes = Vec::new();
        for k in shell_vectors(n, 3) {
            let theta = theta_vector(k, n, chi)?;
            push_frame_modes(&mut modes, k, 3, theta)?;
        }
        Self::from_modes(3, modes)
    }

    /// A basis with no active modes.
    pub fn empty(d: usize) -> Result<Self> {
        check_dim(d)?;
        Ok(Self { d, modes: Vec::new(), partner: Vec::new(), positive: Vec::new() })
    }

    /// Validates that every `(k, j)` has its `(-k, j)` partner with the same
    /// coefficient and frame vector.
    pub fn from_modes(d: usize, modes: Vec<NoiseMode>) -> Result<Self> {
        check_dim(d)?;
        let lookup: HashMap<(LatticeVec, u8), usize> =
            modes.iter().enumerate().map(|(i, m)| ((m.index.k, m.index.j), i)).collect();
        if lookup.len() != modes.len() {
            return Err(Error::Contract("duplicate noise modes".into()));
        }
        let mut partner = Vec::with_capacity(modes.len());
        let mut positive = Vec::new();
        for (i, m) in modes.iter().enumerate() {
            let key = (negate(m.index.k), m.index.j);
            let &p = lookup.get(&key).ok_or_else(|| {
                Error::Contract(format!("mode k={:?} j={} has no conjugate partner", m.index.k, m.index.j))
            })?;
            let q = &modes[p];
            if q.theta != m.theta || q.a != m.a {
                return Err(Error::Contract(format!(
                    "mode k={:?} j={} and its partner disagree on theta or frame",
                    m.index.k, m.index.j
                )));
            }
            if sign_class(m.index.k) != Some(m.index.sign) {
                return Err(Error::Contract(format!("mode k={:?} has a wrong sign class", m.index.k)));
            }
            partner.push(p);
            if m.index.sign == SignClass::Positive {
                positive.push(i);
            }
        }
        Ok(Self { d, modes, partner, positive })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn modes(&self) -> &[NoiseMode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Index of the `(-k, j)` partner of mode `i`.
    pub fn partner(&self, i: usize) -> usize {
        self.partner[i]
    }

    /// Indices of the modes with `k` in the positive half-lattice.
    pub fn positive(&self) -> &[usize] {
        &self.positive
    }

    /// Largest `|k|` among active modes (0 for an empty basis).
    pub fn max_wavenumber(&self) -> f64 {
        self.modes.iter().filter(|m| m.theta > 0.0).map(|m| (norm2(m.index.k) as f64).sqrt()).fold(0.0, f64::max)
    }

    /// `sum_{k,j} theta^2 a (x) a`. Equals `kappa_T I` for scalar noise and
    /// `(2/3) chi eta_n I` for 3D vector noise.
    pub fn covariance_tensor(&self) -> [[f64; 3]; 3] {
        let mut c = [[0.0; 3]; 3];
        for m in &self.modes {
            let t2 = m.theta * m.theta;
            for (p, row) in c.iter_mut().enumerate() {
                for (q, v) in row.iter_mut().enumerate() {
                    *v += t2 * m.a[p] * m.a[q];
                }
            }
        }
        c
    }

    /// Mode table as CSV (`kx,ky,kz,j,theta`).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# schema=1")?;
        writeln!(w, "kx,ky,kz,j,theta")?;
        for m in &self.modes {
            let k = m.index.k;
            writeln!(w, "{},{},{},{},{:.17e}", k[0], k[1], k[2], m.index.j, m.theta)?;
        }
        Ok(())
    }
}

fn push_frame_modes(modes: &mut Vec<NoiseMode>, k: LatticeVec, d: usize, theta: f64) -> Result<()> {
    let sign = sign_class(k).expect("shell excludes the origin");
    for (j, a) in build_frame(k, d)?.into_iter().enumerate() {
        modes.push(NoiseMode { index: WaveIndex { k, j: j as u8 + 1, sign }, a, theta });
    }
    Ok(())
}

/// Complex Brownian increments over one step, aligned with the modes of the
/// basis they were drawn for.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub dt: f64,
    pub key: StreamKey,
    pub increments: Vec<Complex64>,
}

impl NoiseRealization {
    /// All-zero increments (deterministic step).
    pub fn zero(basis: &NoiseBasis, dt: f64, key: StreamKey) -> Self {
        Self { dt, key, increments: vec![Complex64::new(0.0, 0.0); basis.len()] }
    }
}

/// Draws `dW^{k,j}` for one step. For positive `k` real and imaginary parts
/// are independent `N(0, dt)`, so `E|dW|^2 = 2 dt`; negative modes get the
/// conjugate of their partner.
pub fn sample_increments(basis: &NoiseBasis, dt: f64, key: StreamKey) -> Result<NoiseRealization> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    let mut rng = key.rng();
    let s = dt.sqrt();
    let mut increments = vec![Complex64::new(0.0, 0.0); basis.len()];
    for &i in basis.positive() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        let w = Complex64::new(s * re, s * im);
        increments[i] = w;
        increments[basis.partner(i)] = w.conj();
    }
    Ok(NoiseRealization { dt, key, increments })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }

    /// Brute-force shell sums in plain lexicographic order.
    fn brute_sums(n: u32, d: usize) -> (f64, f64, f64) {
        let m = 2 * n as i32;
        let (mut c, mut e, mut a) = (0.0, 0.0, 0.0);
        for x in -m..=m {
            for y in -m..=m {
                for z in -m..=m {
                    if d == 2 && z != 0 {
                        continue;
                    }
                    let r2 = (x * x + y * y + z * z) as f64;
                    let r = r2.sqrt();
                    if r2 >= (n * n) as f64 && r2 <= (4 * n * n) as f64 {
                        c += 1.0 / r.powi(d as i32);
                        e += 1.0 / r.powi(5);
                        a += 1.0 / r.powi(3);
                    }
                }
            }
        }
        (c, e, a)
    }

    #[test]
    fn frame_axis_aligned() {
        let f = build_frame([1, 0, 0], 3).unwrap();
        assert_eq!(f, vec![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(build_frame([-1, 0, 0], 3).unwrap(), f);
    }

    #[test]
    fn frame_diagonal_is_orthonormal() {
        let k = [1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt(), 0.0];
        let f = build_frame([1, 1, 0], 3).unwrap();
        // Gram-Schmidt oracle: every pair among {k/|k|, a1, a2}.
        let all = [k, f[0], f[1]];
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot(all[i], all[j]) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn frame_is_even_for_all_shell_vectors() {
        for d in [2, 3] {
            for k in shell_vectors(2, d) {
                let a = build_frame(k, d).unwrap();
                let b = build_frame(negate(k), d).unwrap();
                assert_eq!(a, b);
                let kf = [k[0] as f64, k[1] as f64, k[2] as f64];
                for v in &a {
                    assert!(dot(*v, kf).abs() < 1e-13);
                    assert!((dot(*v, *v) - 1.0).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn frame_rejects_zero() {
        assert!(matches!(build_frame([0, 0, 0], 3), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn theta_scalar_values() {
        assert_eq!(theta_scalar([1, 0, 0], 2, 2, 1.0).unwrap(), 0.0);
        // c_2 in 2D from enumeration of 2 <= |k| <= 4.
        let (c2, _, _) = brute_sums(2, 2);
        let expect = (2.0 / c2).sqrt() * 0.5;
        let got = theta_scalar([2, 0, 0], 2, 2, 1.0).unwrap();
        assert!((got - expect).abs() < 1e-15 * expect.max(1.0));
        let scaled = theta_scalar([2, 0, 0], 2, 2, 4.0).unwrap();
        assert!((scaled - 2.0 * got).abs() < 1e-15);
    }

    #[test]
    fn theta_vector_values() {
        let t = theta_vector([2, 0, 0], 2, 1.0).unwrap();
        assert!((t - 2f64.powf(-2.5)).abs() < 1e-15);
        assert!((t * t - 0.03125).abs() < 1e-15);
        let v = theta_vector([1, 1, 1], 1, 1.0).unwrap();
        assert!((v - 3f64.powf(-1.25)).abs() < 1e-15);
        assert_eq!(theta_vector([5, 0, 0], 2, 1.0).unwrap(), 0.0);
        assert!(theta_vector([2, 0, 0], 2, 0.0).is_err());
    }

    #[test]
    fn shell_sums_n1() {
        let s = shell_sums(1, 3).unwrap();
        let eta = 6.0 + 12.0 * 2f64.powf(-2.5) + 8.0 * 3f64.powf(-2.5) + 6.0 * 4f64.powf(-2.5);
        let alpha = 6.0 + 12.0 * 2f64.powf(-1.5) + 8.0 * 3f64.powf(-1.5) + 6.0 * 4f64.powf(-1.5);
        assert!((s.eta_n - eta).abs() < 1e-13);
        assert!((s.alpha_n - alpha).abs() < 1e-13);
        assert!((s.eta_n - 8.8220205).abs() < 1e-7);
        assert!((s.alpha_n - 12.5322414).abs() < 1e-7);
    }

    #[test]
    fn shell_sums_match_brute_force() {
        for d in [2, 3] {
            for n in 1..=8 {
                let s = shell_sums(n, d).unwrap();
                let (c, e, a) = brute_sums(n, d);
                for (x, y) in [(s.c_n, c), (s.eta_n, e), (s.alpha_n, a)] {
                    assert!((x - y).abs() <= 1e-13 * y, "n={n} d={d}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn isotropy_identity_vector() {
        for n in [1, 2, 4] {
            let basis = NoiseBasis::vector(n, 1.0).unwrap();
            let eta = shell_sums(n, 3).unwrap().eta_n;
            let c = basis.covariance_tensor();
            for p in 0..3 {
                for q in 0..3 {
                    let expect = if p == q { 2.0 / 3.0 * eta } else { 0.0 };
                    assert!((c[p][q] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn isotropy_identity_scalar() {
        for d in [2, 3] {
            let basis = NoiseBasis::scalar(d, 3, 0.7).unwrap();
            let c = basis.covariance_tensor();
            for p in 0..d {
                for q in 0..d {
                    let expect = if p == q { 0.7 } else { 0.0 };
                    assert!((c[p][q] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn from_modes_requires_conjugate_closure() {
        let basis = NoiseBasis::vector(1, 1.0).unwrap();
        let modes: Vec<_> = basis.modes().iter().copied().filter(|m| m.index.sign == SignClass::Positive).collect();
        assert!(matches!(NoiseBasis::from_modes(3, modes), Err(Error::Contract(_))));
    }

    #[test]
    fn increments_are_conjugate_and_deterministic() {
        let basis = NoiseBasis::vector(1, 1.0).unwrap();
        let key = StreamKey::new(42, 1, 5);
        let a = sample_increments(&basis, 1e-3, key).unwrap();
        let b = sample_increments(&basis, 1e-3, key).unwrap();
        assert_eq!(a, b);
        for i in 0..basis.len() {
            assert_eq!(a.increments[basis.partner(i)], a.increments[i].conj());
        }
    }

    #[test]
    fn increment_second_moment() {
        let basis = NoiseBasis::scalar(2, 1, 1.0).unwrap();
        let i0 = basis.positive()[0];
        let dt = 0.01;
        let draws = 100_000u64;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for step in 0..draws {
            let r = sample_increments(&basis, dt, StreamKey::new(9, 0, step)).unwrap();
            let v = r.increments[i0].norm_sqr() / dt;
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / draws as f64;
        let var = sum2 / draws as f64 - mean * mean;
        let se = (var / draws as f64).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn csv_export_has_header() {
        let basis = NoiseBasis::vector(1, 1.0).unwrap();
        let mut buf = Vec::new();
        basis.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# schema=1"));
        assert_eq!(lines.next(), Some("kx,ky,kz,j,theta"));
        assert_eq!(lines.count(), basis.len());
    }
}
