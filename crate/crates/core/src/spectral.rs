//! Pseudo-spectral grids and truncated Fourier fields on `[0, 2pi)^d`.
//!
//! Convention: `f(x) = sum_k f_k exp(i k.x)` with
//! `f_k = (2pi)^{-d} int f exp(-i k.x) dx`, so the forward transform carries
//! `1/N^d` and `||f||^2 = (2pi)^d sum |f_k|^2`.
//!
//! Coefficients are stored on the full `N^d` FFT grid. Only the Galerkin set
//! `0 < |k| <= k_max` is ever populated; `N >= 3 k_max + 1` makes quadratic
//! products of Galerkin fields alias-free after projection.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::noise::LatticeVec;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Smallest integer `>= m` whose only prime factors are 2, 3 and 5.
pub fn smooth_size(m: usize) -> usize {
    let mut n = m.max(1);
    loop {
        let mut r = n;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return n;
        }
        n += 1;
    }
}

pub struct SpectralGrid {
    d: usize,
    n: usize,
    k_max: u32,
    len: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    wave: Vec<i32>,
    mask: Vec<bool>,
    galerkin: Vec<usize>,
    neg: Vec<usize>,
    kf: [Vec<f64>; 3],
    k2: Vec<f64>,
}

impl std::fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralGrid").field("d", &self.d).field("n", &self.n).field("k_max", &self.k_max).finish()
    }
}

impl SpectralGrid {
    /// Grid for the Galerkin set `|k| <= k_max` with the default
    /// alias-free size.
    pub fn new(d: usize, k_max: u32) -> Result<Arc<Self>> {
        Self::with_size(d, k_max, smooth_size(3 * k_max as usize + 1))
    }

    /// Grid with an explicit number of points per side. Must satisfy
    /// `n >= 3 k_max + 1`.
    pub fn with_size(d: usize, k_max: u32, n: usize) -> Result<Arc<Self>> {
        if d != 2 && d != 3 {
            return Err(Error::InvalidInput(format!("dimension must be 2 or 3, got {d}")));
        }
        if k_max == 0 {
            return Err(Error::InvalidInput("k_max must be >= 1".into()));
        }
        if n < 3 * k_max as usize + 1 {
            return Err(Error::Resolution(format!(
                "grid size {n} aliases products at k_max={k_max} (need >= {})",
                3 * k_max + 1
            )));
        }
        Self::build(d, k_max, n)
    }

    /// Smallest smooth grid holding every product of a Galerkin field with a
    /// field of bandwidth `band <= k_max` without aliasing,
    /// `N >= 2 (k_max + band) + 1`.
    pub fn for_products(d: usize, k_max: u32, band: u32) -> Result<Arc<Self>> {
        if band > k_max {
            return Err(Error::InvalidInput(format!("band {band} exceeds k_max {k_max}")));
        }
        Self::build(d, k_max, smooth_size(2 * (k_max + band) as usize + 1))
    }

    fn build(d: usize, k_max: u32, n: usize) -> Result<Arc<Self>> {
        if d != 2 && d != 3 {
            return Err(Error::InvalidInput(format!("dimension must be 2 or 3, got {d}")));
        }
        if k_max == 0 {
            return Err(Error::InvalidInput("k_max must be >= 1".into()));
        }
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let len = n.pow(d as u32);
        let wave: Vec<i32> = (0..n).map(|i| if i <= n / 2 { i as i32 } else { i as i32 - n as i32 }).collect();
        let mut grid = Self {
            d,
            n,
            k_max,
            len,
            fft,
            ifft,
            wave,
            mask: Vec::new(),
            galerkin: Vec::new(),
            neg: Vec::new(),
            kf: [Vec::new(), Vec::new(), Vec::new()],
            k2: Vec::new(),
        };
        let k2max = (k_max as i64).pow(2);
        grid.mask = (0..len)
            .map(|i| {
                let r2 = crate::noise::norm2(grid.wave_vector(i));
                r2 > 0 && r2 <= k2max
            })
            .collect();
        grid.galerkin = (0..len).filter(|&i| grid.mask[i]).collect();
        grid.neg = (0..len).map(|i| grid.index_unchecked(negate(grid.wave_vector(i)))).collect();
        for c in 0..3 {
            grid.kf[c] = (0..len).map(|i| grid.wave_vector(i)[c] as f64).collect();
        }
        grid.k2 = (0..len).map(|i| crate::noise::norm2(grid.wave_vector(i)) as f64).collect();
        Ok(Arc::new(grid))
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Points per side.
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn k_max(&self) -> u32 {
        self.k_max
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Volume of the torus, `(2pi)^d`.
    pub fn volume(&self) -> f64 {
        (2.0 * PI).powi(self.d as i32)
    }

    /// Whether flat index `i` belongs to the Galerkin set.
    pub fn in_galerkin(&self, i: usize) -> bool {
        self.mask[i]
    }

    /// Flat indices of the Galerkin set, ascending.
    pub fn galerkin_indices(&self) -> &[usize] {
        &self.galerkin
    }

    /// Flat index of `-k` for the wave vector stored at `i`.
    pub fn neg_index(&self, i: usize) -> usize {
        self.neg[i]
    }

    /// Component `c` of every stored wave vector, as floats.
    pub fn wavenumbers(&self, c: usize) -> &[f64] {
        &self.kf[c]
    }

    /// `|k|^2` for every stored wave vector.
    pub fn wavenumber_sq(&self) -> &[f64] {
        &self.k2
    }

    /// Wave vector stored at flat index `i`.
    pub fn wave_vector(&self, i: usize) -> LatticeVec {
        let n = self.n;
        if self.d == 2 {
            [self.wave[i / n], self.wave[i % n], 0]
        } else {
            [self.wave[i / (n * n)], self.wave[(i / n) % n], self.wave[i % n]]
        }
    }

    /// Physical coordinates of grid point `i`.
    pub fn point(&self, i: usize) -> [f64; 3] {
        let n = self.n;
        let h = 2.0 * PI / n as f64;
        if self.d == 2 {
            [(i / n) as f64 * h, (i % n) as f64 * h, 0.0]
        } else {
            [(i / (n * n)) as f64 * h, ((i / n) % n) as f64 * h, (i % n) as f64 * h]
        }
    }

    /// Flat index holding wave vector `k`, if it fits on the grid.
    pub fn index_of(&self, k: LatticeVec) -> Option<usize> {
        let half = (self.n / 2) as i32;
        let lo = half - self.n as i32 + 1;
        let dims = if self.d == 2 { &k[..2] } else { &k[..] };
        if self.d == 2 && k[2] != 0 {
            return None;
        }
        if dims.iter().any(|&c| c < lo || c > half) {
            return None;
        }
        Some(self.index_unchecked(k))
    }

    fn index_unchecked(&self, k: LatticeVec) -> usize {
        let n = self.n as i32;
        let w = |c: i32| (c.rem_euclid(n)) as usize;
        if self.d == 2 {
            w(k[0]) * self.n + w(k[1])
        } else {
            (w(k[0]) * self.n + w(k[1])) * self.n + w(k[2])
        }
    }

    /// In-place transform from physical values to Fourier coefficients.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.fft);
        let s = 1.0 / self.len as f64;
        data.iter_mut().for_each(|c| *c *= s);
    }

    /// In-place synthesis of physical values from Fourier coefficients.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.ifft);
    }

    /// Physical values of two real fields from one complex transform.
    /// Both inputs must be conjugate-symmetric.
    pub fn synthesize_pair(&self, a: &[Complex64], b: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        let mut buf: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x + Complex64::i() * y).collect();
        self.inverse(&mut buf);
        buf.into_iter().map(|z| (z.re, z.im)).unzip()
    }

    /// Fourier coefficients of two real fields from one complex transform.
    pub fn analyze_pair(&self, f: &[f64], g: &[f64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let mut z: Vec<Complex64> = f.iter().zip(g).map(|(&x, &y)| Complex64::new(x, y)).collect();
        self.forward(&mut z);
        let mut a = vec![ZERO; self.len];
        let mut b = vec![ZERO; self.len];
        for i in 0..self.len {
            let zc = z[self.neg[i]].conj();
            a[i] = 0.5 * (z[i] + zc);
            b[i] = Complex64::new(0.0, -0.5) * (z[i] - zc);
        }
        (a, b)
    }

    /// Physical values of several real fields, transformed two at a time.
    pub fn synthesize_many(&self, comps: &[Vec<Complex64>]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(comps.len());
        for chunk in comps.chunks(2) {
            if let [a, b] = chunk {
                let (x, y) = self.synthesize_pair(a, b);
                out.push(x);
                out.push(y);
            } else {
                out.push(self.synthesize(&chunk[0]));
            }
        }
        out
    }

    /// Physical values of one real field.
    pub fn synthesize(&self, a: &[Complex64]) -> Vec<f64> {
        let mut buf = a.to_vec();
        self.inverse(&mut buf);
        buf.into_iter().map(|z| z.re).collect()
    }

    /// Fourier coefficients of one real field.
    pub fn analyze(&self, f: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.len, "buffer does not match grid");
        let n = self.n;
        WORKSPACE.with(|ws| {
            let mut ws = ws.borrow_mut();
            let (scratch, tmp) = &mut *ws;
            scratch.resize(plan.get_inplace_scratch_len(), ZERO);
            tmp.resize(self.len, ZERO);
            plan.process_with_scratch(data, scratch);
            for axis in (0..self.d - 1).rev() {
                let stride = n.pow((self.d - 1 - axis) as u32);
                let outer = self.len / (n * stride);
                transpose_blocks(data, tmp, outer, n, stride);
                plan.process_with_scratch(tmp, scratch);
                transpose_blocks(tmp, data, outer, stride, n);
            }
        });
    }
}

thread_local! {
    static WORKSPACE: std::cell::RefCell<(Vec<Complex64>, Vec<Complex64>)> = const { std::cell::RefCell::new((Vec::new(), Vec::new())) };
}

fn negate(k: LatticeVec) -> LatticeVec {
    [-k[0], -k[1], -k[2]]
}

/// Transposes each of `outer` contiguous `rows x cols` blocks.
fn transpose_blocks(src: &[Complex64], dst: &mut [Complex64], outer: usize, rows: usize, cols: usize) {
    let block = rows * cols;
    for (s, t) in src.chunks_exact(block).zip(dst.chunks_exact_mut(block)).take(outer) {
        transpose::transpose(s, t, cols, rows);
    }
}

/// Real scalar field in the truncated Fourier basis, zero mean.
#[derive(Debug, Clone)]
pub struct SpectralScalarField {
    grid: Arc<SpectralGrid>,
    coeffs: Vec<Complex64>,
}

impl SpectralScalarField {
    pub fn zeros(grid: &Arc<SpectralGrid>) -> Self {
        Self { grid: grid.clone(), coeffs: vec![ZERO; grid.len()] }
    }

    /// Field with the given `(k, c_k)` pairs; the `-k` partners are set to
    /// the conjugates. Modes outside the Galerkin set are rejected.
    pub fn from_modes(grid: &Arc<SpectralGrid>, modes: &[(LatticeVec, Complex64)]) -> Result<Self> {
        let mut f = Self::zeros(grid);
        for &(k, c) in modes {
            let i = grid
                .index_of(k)
                .filter(|&i| grid.in_galerkin(i))
                .ok_or_else(|| Error::InvalidInput(format!("mode {k:?} outside the Galerkin set")))?;
            f.coeffs[i] = c;
            f.coeffs[grid.neg_index(i)] = c.conj();
        }
        Ok(f)
    }

    /// Samples a physical function on the grid and projects it.
    pub fn from_fn(grid: &Arc<SpectralGrid>, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values: Vec<f64> = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Self::from_physical(grid, &values)
    }

    /// Projects physical grid values onto the Galerkin set.
    pub fn from_physical(grid: &Arc<SpectralGrid>, values: &[f64]) -> Self {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        grid.forward(&mut buf);
        let mut f = Self { grid: grid.clone(), coeffs: buf };
        f.project();
        f
    }

    pub fn from_coeffs(grid: &Arc<SpectralGrid>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), got: coeffs.len() });
        }
        let mut f = Self { grid: grid.clone(), coeffs };
        f.project();
        Ok(f)
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn coeff(&self, k: LatticeVec) -> Complex64 {
        self.grid.index_of(k).map_or(ZERO, |i| self.coeffs[i])
    }

    /// Zeroes modes outside the Galerkin set (including the mean) and
    /// symmetrizes `c(-k) = conj c(k)`.
    pub fn project(&mut self) {
        project_real(&self.grid, &mut self.coeffs);
    }

    pub fn to_physical(&self) -> Vec<f64> {
        let mut buf = self.coeffs.clone();
        self.grid.inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// `||f||^2` via Parseval.
    pub fn norm_sq(&self) -> f64 {
        self.grid.volume() * self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }

    /// `int f g dx`.
    pub fn inner(&self, other: &Self) -> f64 {
        self.grid.volume() * self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| (a * b.conj()).re).sum::<f64>()
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Self) {
        self.coeffs.iter_mut().zip(&other.coeffs).for_each(|(a, b)| *a += s * b);
    }

    pub fn scale(&mut self, s: f64) {
        self.coeffs.iter_mut().for_each(|a| *a *= s);
    }

    /// `max_k |c(k) - conj c(-k)|`, zero for a real field.
    pub fn reality_defect(&self) -> f64 {
        (0..self.coeffs.len())
            .map(|i| (self.coeffs[i] - self.coeffs[self.grid.neg_index(i)].conj()).norm())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn project_real(grid: &SpectralGrid, c: &mut [Complex64]) {
    for i in 0..c.len() {
        if !grid.in_galerkin(i) {
            c[i] = ZERO;
            continue;
        }
        let j = grid.neg_index(i);
        if j < i {
            continue;
        }
        let avg = 0.5 * (c[i] + c[j].conj());
        c[i] = avg;
        c[j] = avg.conj();
    }
}

/// Real 3D vector field in the truncated Fourier basis.
#[derive(Debug, Clone)]
pub struct SpectralVectorField {
    grid: Arc<SpectralGrid>,
    comps: [Vec<Complex64>; 3],
}

impl SpectralVectorField {
    pub fn zeros(grid: &Arc<SpectralGrid>) -> Self {
        let z = vec![ZERO; grid.len()];
        Self { grid: grid.clone(), comps: [z.clone(), z.clone(), z] }
    }

    /// Field with the given `(k, amplitude)` pairs, conjugate partners
    /// filled in. The result is not projected onto divergence-free fields.
    pub fn from_modes(grid: &Arc<SpectralGrid>, modes: &[(LatticeVec, [Complex64; 3])]) -> Result<Self> {
        if grid.dim() != 3 {
            return Err(Error::InvalidInput("vector fields need a 3D grid".into()));
        }
        let mut f = Self::zeros(grid);
        for &(k, v) in modes {
            let i = grid
                .index_of(k)
                .filter(|&i| grid.in_galerkin(i))
                .ok_or_else(|| Error::InvalidInput(format!("mode {k:?} outside the Galerkin set")))?;
            let j = grid.neg_index(i);
            for c in 0..3 {
                f.comps[c][i] = v[c];
                f.comps[c][j] = v[c].conj();
            }
        }
        Ok(f)
    }

    /// Samples a physical vector function and projects it (Galerkin and
    /// reality only; call [`leray_project`] for incompressibility).
    pub fn from_fn(grid: &Arc<SpectralGrid>, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let mut out = Self::zeros(grid);
        for i in 0..grid.len() {
            let v = f(grid.point(i));
            for c in 0..3 {
                out.comps[c][i] = Complex64::new(v[c], 0.0);
            }
        }
        for c in 0..3 {
            grid.forward(&mut out.comps[c]);
        }
        out.project();
        out
    }

    pub fn from_components(grid: &Arc<SpectralGrid>, comps: [Vec<Complex64>; 3]) -> Result<Self> {
        for c in &comps {
            if c.len() != grid.len() {
                return Err(Error::LengthMismatch { expected: grid.len(), got: c.len() });
            }
        }
        let mut f = Self { grid: grid.clone(), comps };
        f.project();
        Ok(f)
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub fn component(&self, c: usize) -> &[Complex64] {
        &self.comps[c]
    }

    pub fn components_mut(&mut self) -> &mut [Vec<Complex64>; 3] {
        &mut self.comps
    }

    pub fn coeff(&self, k: LatticeVec) -> [Complex64; 3] {
        match self.grid.index_of(k) {
            Some(i) => [self.comps[0][i], self.comps[1][i], self.comps[2][i]],
            None => [ZERO; 3],
        }
    }

    pub fn project(&mut self) {
        for c in &mut self.comps {
            project_real(&self.grid, c);
        }
    }

    /// Physical values, one vector per grid point.
    pub fn to_physical(&self) -> Vec<[f64; 3]> {
        let mut out = vec![[0.0; 3]; self.grid.len()];
        for c in 0..3 {
            let mut buf = self.comps[c].clone();
            self.grid.inverse(&mut buf);
            for (o, v) in out.iter_mut().zip(buf) {
                o[c] = v.re;
            }
        }
        out
    }

    pub fn norm_sq(&self) -> f64 {
        self.grid.volume() * self.comps.iter().flatten().map(|c| c.norm_sqr()).sum::<f64>()
    }

    pub fn inner(&self, other: &Self) -> f64 {
        let s: f64 = (0..3)
            .map(|c| self.comps[c].iter().zip(&other.comps[c]).map(|(a, b)| (a * b.conj()).re).sum::<f64>())
            .sum();
        self.grid.volume() * s
    }

    pub fn axpy(&mut self, s: f64, other: &Self) {
        for c in 0..3 {
            self.comps[c].iter_mut().zip(&other.comps[c]).for_each(|(a, b)| *a += s * b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.comps.iter_mut().flatten().for_each(|a| *a *= s);
    }

    /// Spectral divergence magnitude `max_k |k . B_k|`.
    pub fn max_divergence(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| {
                let k = self.grid.wave_vector(i);
                (0..3).map(|c| self.comps[c][i] * k[c] as f64).sum::<Complex64>().norm()
            })
            .fold(0.0, f64::max)
    }

    pub fn reality_defect(&self) -> f64 {
        let g = &self.grid;
        (0..g.len())
            .flat_map(|i| (0..3).map(move |c| (c, i)))
            .map(|(c, i)| (self.comps[c][i] - self.comps[c][g.neg_index(i)].conj()).norm())
            .fold(0.0, f64::max)
    }
}

/// `B_k -> (I - k k^T/|k|^2) B_k`.
pub fn leray_project(field: &SpectralVectorField) -> SpectralVectorField {
    let mut out = field.clone();
    leray_in_place(&mut out);
    out
}

pub(crate) fn leray_in_place(field: &mut SpectralVectorField) {
    let grid = field.grid.clone();
    let k2 = grid.wavenumber_sq();
    let kf = [grid.wavenumbers(0), grid.wavenumbers(1), grid.wavenumbers(2)];
    for &i in grid.galerkin_indices() {
        let dot: Complex64 = (0..3).map(|c| field.comps[c][i] * kf[c][i]).sum();
        let s = dot / k2[i];
        for c in 0..3 {
            field.comps[c][i] -= s * kf[c][i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_scalar(grid: &Arc<SpectralGrid>, seed: u64) -> SpectralScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..grid.len()).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        SpectralScalarField::from_coeffs(grid, coeffs).unwrap()
    }

    fn random_vector(grid: &Arc<SpectralGrid>, seed: u64) -> SpectralVectorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut comp =
            || (0..grid.len()).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        SpectralVectorField::from_components(grid, [comp(), comp(), comp()]).unwrap()
    }

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(25), 25);
        assert_eq!(smooth_size(28), 30);
        assert_eq!(smooth_size(49), 50);
        assert_eq!(smooth_size(52), 54);
        assert_eq!(smooth_size(7), 8);
    }

    #[test]
    fn rejects_aliasing_grid() {
        assert!(matches!(SpectralGrid::with_size(2, 8, 20), Err(Error::Resolution(_))));
    }

    #[test]
    fn index_roundtrip() {
        for d in [2, 3] {
            let g = SpectralGrid::new(d, 3).unwrap();
            for i in 0..g.len() {
                assert_eq!(g.index_of(g.wave_vector(i)), Some(i));
            }
        }
    }

    #[test]
    fn single_mode_parseval() {
        let g = SpectralGrid::new(2, 4).unwrap();
        let a = c(0.3, -0.7);
        let f = SpectralScalarField::from_modes(&g, &[([1, 2, 0], a)]).unwrap();
        let expect = 2.0 * a.norm_sqr() * (2.0 * PI).powi(2);
        assert!((f.norm_sq() - expect).abs() < 1e-13);
    }

    #[test]
    fn parseval_matches_riemann_sum() {
        for d in [2, 3] {
            let g = SpectralGrid::new(d, 4).unwrap();
            let f = random_scalar(&g, 3);
            let vals = f.to_physical();
            let h = 2.0 * PI / g.size() as f64;
            let quad: f64 = vals.iter().map(|v| v * v).sum::<f64>() * h.powi(d as i32);
            assert!((quad - f.norm_sq()).abs() < 1e-10 * quad);
        }
    }

    #[test]
    fn transform_roundtrip_and_physical_values() {
        let g = SpectralGrid::new(3, 3).unwrap();
        let f = SpectralScalarField::from_fn(&g, |x| (x[0] + 2.0 * x[2]).sin() + 0.5 * x[1].cos());
        let vals = f.to_physical();
        for i in (0..g.len()).step_by(97) {
            let x = g.point(i);
            let expect = (x[0] + 2.0 * x[2]).sin() + 0.5 * x[1].cos();
            assert!((vals[i] - expect).abs() < 1e-12);
        }
        assert!((f.coeff([1, 0, 2]) - c(0.0, -0.5)).norm() < 1e-14);
        assert!((f.coeff([0, 1, 0]) - c(0.25, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn pair_transforms_match_single_transforms() {
        let g = SpectralGrid::new(3, 3).unwrap();
        let a = random_scalar(&g, 21);
        let b = random_scalar(&g, 22);
        let (pa, pb) = g.synthesize_pair(a.coeffs(), b.coeffs());
        let (sa, sb) = (a.to_physical(), b.to_physical());
        for i in 0..g.len() {
            assert!((pa[i] - sa[i]).abs() < 1e-12 && (pb[i] - sb[i]).abs() < 1e-12);
        }
        let (ca, cb) = g.analyze_pair(&sa, &sb);
        for i in 0..g.len() {
            assert!((ca[i] - a.coeffs()[i]).norm() < 1e-14);
            assert!((cb[i] - b.coeffs()[i]).norm() < 1e-14);
        }
    }

    #[test]
    fn projection_enforces_reality_and_zero_mean() {
        let g = SpectralGrid::new(3, 3).unwrap();
        let f = random_scalar(&g, 5);
        assert!(f.reality_defect() < 1e-15);
        assert_eq!(f.coeff([0, 0, 0]), ZERO);
        assert_eq!(f.coeff([3, 1, 0]), ZERO);
        let imag = {
            let mut b = f.coeffs().to_vec();
            g.inverse(&mut b);
            b.iter().map(|v| v.im.abs()).fold(0.0, f64::max)
        };
        assert!(imag < 1e-12);
    }

    #[test]
    fn leray_fixes_solenoidal_and_kills_gradients() {
        let g = SpectralGrid::new(3, 3).unwrap();
        let sol = SpectralVectorField::from_modes(&g, &[([1, 0, 0], [ZERO, c(1.0, 0.5), c(0.0, 2.0)])]).unwrap();
        let p = leray_project(&sol);
        let mut diff = p.clone();
        diff.axpy(-1.0, &sol);
        assert!(diff.norm_sq() < 1e-28);

        let k = [1.0, 2.0, -1.0];
        let s = c(0.4, -0.2);
        let grad = SpectralVectorField::from_modes(&g, &[([1, 2, -1], [s * k[0], s * k[1], s * k[2]])]).unwrap();
        assert!(leray_project(&grad).norm_sq() < 1e-28);
    }

    #[test]
    fn leray_idempotent_on_random_field() {
        let g = SpectralGrid::new(3, 4).unwrap();
        let f = random_vector(&g, 11);
        let p1 = leray_project(&f);
        let p2 = leray_project(&p1);
        for comp in 0..3 {
            for (a, b) in p1.component(comp).iter().zip(p2.component(comp)) {
                assert!((a - b).norm() < 1e-14);
            }
        }
        assert!(p1.max_divergence() < 1e-12);
    }

    #[test]
    fn inner_product_is_physical_quadrature() {
        let g = SpectralGrid::new(3, 3).unwrap();
        let a = random_vector(&g, 1);
        let b = random_vector(&g, 2);
        let pa = a.to_physical();
        let pb = b.to_physical();
        let h3 = (2.0 * PI / g.size() as f64).powi(3);
        let quad: f64 = pa.iter().zip(&pb).map(|(x, y)| x[0] * y[0] + x[1] * y[1] + x[2] * y[2]).sum::<f64>() * h3;
        assert!((quad - a.inner(&b)).abs() < 1e-10 * quad.abs().max(1.0));
    }
}
