//! Limit diffusion matrices and the b-space Fokker-Planck solver.
//!
//! `L(b) = c_L (2|b|^2 I - b b^T)` with `c_L = 8 pi chi ln 2 / 15` is the
//! limit of the finite-shell matrices `L^n(b)`. The limit measure solves
//! `d_t rho = div_b(L(b) grad_b rho)` in weak form; because the columns of
//! `L` are divergence-free this is also `L : Hess_b` acting on test
//! functions.

use std::f64::consts::{LN_2, PI};

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::{norm2, shell_vectors};
use crate::spectral::SpectralScalarField;

/// `8 pi chi ln 2 / 15`.
pub fn c_l(chi: f64) -> f64 {
    8.0 * PI * chi * LN_2 / 15.0
}

/// Relative growth rate of `int |b|^2 rho`, `10 c_L = 16 pi chi ln 2 / 3`.
pub fn moment_growth_rate(chi: f64) -> f64 {
    10.0 * c_l(chi)
}

fn vec3(b: [f64; 3]) -> Vector3<f64> {
    Vector3::new(b[0], b[1], b[2])
}

pub fn l_matrix(b: [f64; 3], chi: f64) -> Matrix3<f64> {
    let v = vec3(b);
    c_l(chi) * (2.0 * v.norm_squared() * Matrix3::identity() - v * v.transpose())
}

/// Symmetric square root of `L(b)`:
/// `sqrt(c_L)|b| P_b + sqrt(2 c_L)|b| (I - P_b)`.
pub fn a_matrix(b: [f64; 3], chi: f64) -> Matrix3<f64> {
    let v = vec3(b);
    let r = v.norm();
    if r == 0.0 {
        return Matrix3::zeros();
    }
    let p = v * v.transpose() / (r * r);
    let c = c_l(chi);
    c.sqrt() * r * p + (2.0 * c).sqrt() * r * (Matrix3::identity() - p)
}

/// `L^n(b) = sum_{n<=|k|<=2n} (b.k)^2 |k|^{-5} (I - k k^T/|k|^2)` stored as
/// the quadratic form `L^n_{ij}(b) = b_p b_q Q_{pqij}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LnTensor {
    n: u32,
    q: [[Matrix3<f64>; 3]; 3],
}

impl LnTensor {
    pub fn new(n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("shell parameter n must be >= 1".into()));
        }
        let mut q = [[Matrix3::zeros(); 3]; 3];
        for k in shell_vectors(n, 3) {
            let kv = Vector3::new(k[0] as f64, k[1] as f64, k[2] as f64);
            let r2 = norm2(k) as f64;
            let proj = Matrix3::identity() - kv * kv.transpose() / r2;
            let w = r2.powf(-2.5);
            for (p, row) in q.iter_mut().enumerate() {
                for (s, m) in row.iter_mut().enumerate() {
                    *m += w * kv[p] * kv[s] * proj;
                }
            }
        }
        Ok(Self { n, q })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn matrix(&self, b: [f64; 3]) -> Matrix3<f64> {
        let mut m = Matrix3::zeros();
        for p in 0..3 {
            for s in 0..3 {
                m += b[p] * b[s] * self.q[p][s];
            }
        }
        m
    }
}

/// Direct evaluation of `L^n(b)` by summing over the shell.
pub fn ln_matrix(b: [f64; 3], n: u32) -> Result<Matrix3<f64>> {
    if n == 0 {
        return Err(Error::InvalidInput("shell parameter n must be >= 1".into()));
    }
    let v = vec3(b);
    let mut m = Matrix3::zeros();
    for k in shell_vectors(n, 3) {
        let kv = Vector3::new(k[0] as f64, k[1] as f64, k[2] as f64);
        let r2 = norm2(k) as f64;
        let bk = v.dot(&kv);
        m += bk * bk * r2.powf(-2.5) * (Matrix3::identity() - kv * kv.transpose() / r2);
    }
    Ok(m)
}

/// A `C^2` function of `b` with analytic derivatives.
pub trait BTestFunction {
    fn value(&self, b: [f64; 3]) -> f64;
    fn gradient(&self, b: [f64; 3]) -> [f64; 3];
    fn hessian(&self, b: [f64; 3]) -> Matrix3<f64>;
}

/// `div_b(L(b) grad f) = L(b) : Hess f` (columns of `L` are divergence-free).
pub fn limit_generator(f: &dyn BTestFunction, b: [f64; 3], chi: f64) -> f64 {
    l_matrix(b, chi).component_mul(&f.hessian(b)).sum()
}

/// Quintic smoothstep on `[0, 1]` with value, first and second derivative.
fn smoothstep(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0, 0.0)
    } else {
        let v = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
        let d1 = 30.0 * t * t * (1.0 - t) * (1.0 - t);
        let d2 = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
        (v, d1, d2)
    }
}

/// Radial test function `f(b) = F(|b|^2)`.
pub trait RadialProfile {
    /// `F(s), F'(s), F''(s)`.
    fn profile(&self, s: f64) -> (f64, f64, f64);
}

impl<T: RadialProfile> BTestFunction for T {
    fn value(&self, b: [f64; 3]) -> f64 {
        self.profile(vec3(b).norm_squared()).0
    }

    fn gradient(&self, b: [f64; 3]) -> [f64; 3] {
        let (_, d1, _) = self.profile(vec3(b).norm_squared());
        [2.0 * d1 * b[0], 2.0 * d1 * b[1], 2.0 * d1 * b[2]]
    }

    fn hessian(&self, b: [f64; 3]) -> Matrix3<f64> {
        let v = vec3(b);
        let (_, d1, d2) = self.profile(v.norm_squared());
        2.0 * d1 * Matrix3::identity() + 4.0 * d2 * v * v.transpose()
    }
}

/// `|b|^2` multiplied by a `C^2` cutoff that is 1 for `|b|^2 <= s_in` and 0
/// for `|b|^2 >= s_out`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncatedSquare {
    pub s_in: f64,
    pub s_out: f64,
}

impl RadialProfile for TruncatedSquare {
    fn profile(&self, s: f64) -> (f64, f64, f64) {
        let w = self.s_out - self.s_in;
        let (c, c1, c2) = smoothstep((self.s_out - s) / w);
        let (c1, c2) = (-c1 / w, c2 / (w * w));
        (s * c, c + s * c1, 2.0 * c1 + s * c2)
    }
}

/// Cutoff alone: 1 inside `|b|^2 <= s_in`, 0 beyond `s_out`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialBump {
    pub s_in: f64,
    pub s_out: f64,
}

impl RadialProfile for RadialBump {
    fn profile(&self, s: f64) -> (f64, f64, f64) {
        let w = self.s_out - self.s_in;
        let (c, c1, c2) = smoothstep((self.s_out - s) / w);
        (c, -c1 / w, c2 / (w * w))
    }
}

/// Cell-centred density on the cube `[-half_width, half_width]^3`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BGridDensity {
    pub half_width: f64,
    pub cells: usize,
    /// Density per cell, `x` slowest and `z` fastest.
    pub values: Vec<f64>,
}

impl BGridDensity {
    pub fn zeros(half_width: f64, cells: usize) -> Result<Self> {
        if !(half_width > 0.0) || cells < 4 {
            return Err(Error::InvalidInput("box needs positive width and >= 4 cells per side".into()));
        }
        Ok(Self { half_width, cells, values: vec![0.0; cells * cells * cells] })
    }

    /// Normalized Gaussian blob sampled at cell centres.
    pub fn gaussian(half_width: f64, cells: usize, center: [f64; 3], sigma: f64) -> Result<Self> {
        let mut rho = Self::zeros(half_width, cells)?;
        for i in 0..rho.values.len() {
            let b = rho.center(i);
            let r2: f64 = (0..3).map(|c| (b[c] - center[c]).powi(2)).sum();
            rho.values[i] = (-0.5 * r2 / (sigma * sigma)).exp();
        }
        let m = rho.mass();
        if m == 0.0 {
            return Err(Error::Resolution("Gaussian blob misses every cell".into()));
        }
        rho.values.iter_mut().for_each(|v| *v /= m);
        Ok(rho)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.cells as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(3)
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.cells + j) * self.cells + k
    }

    pub fn center(&self, idx: usize) -> [f64; 3] {
        let m = self.cells;
        let h = self.spacing();
        let c = |i: usize| -self.half_width + (i as f64 + 0.5) * h;
        [c(idx / (m * m)), c((idx / m) % m), c(idx % m)]
    }

    /// Cell containing `b`, if inside the box.
    pub fn locate(&self, b: [f64; 3]) -> Option<usize> {
        let h = self.spacing();
        let mut ix = [0usize; 3];
        for c in 0..3 {
            let t = ((b[c] + self.half_width) / h).floor();
            if t < 0.0 || t >= self.cells as f64 {
                return None;
            }
            ix[c] = t as usize;
        }
        Some(self.index(ix[0], ix[1], ix[2]))
    }

    pub fn integrate(&self, f: impl Fn([f64; 3]) -> f64) -> f64 {
        let dv = self.cell_volume();
        self.values.iter().enumerate().map(|(i, &v)| v * f(self.center(i))).sum::<f64>() * dv
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn second_moment(&self) -> f64 {
        self.integrate(|b| b[0] * b[0] + b[1] * b[1] + b[2] * b[2])
    }

    /// Mass in the outermost layer of cells.
    pub fn boundary_mass(&self) -> f64 {
        let m = self.cells;
        let dv = self.cell_volume();
        let on_edge = |i: usize| i == 0 || i == m - 1;
        self.values
            .iter()
            .enumerate()
            .filter(|(idx, _)| on_edge(idx / (m * m)) || on_edge((idx / m) % m) || on_edge(idx % m))
            .map(|(_, v)| v)
            .sum::<f64>()
            * dv
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Cell masses (density times cell volume).
    pub fn cell_masses(&self) -> Vec<f64> {
        let dv = self.cell_volume();
        self.values.iter().map(|v| v * dv).collect()
    }
}

/// `(t, mass, m2, boundary_mass)` sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentSample {
    pub t: f64,
    pub mass: f64,
    pub m2: f64,
    pub boundary_mass: f64,
}

impl MomentSample {
    pub fn of(t: f64, rho: &BGridDensity) -> Self {
        Self { t, mass: rho.mass(), m2: rho.second_moment(), boundary_mass: rho.boundary_mass() }
    }
}

/// Explicit conservative finite-volume solver for `d_t rho = div(L grad rho)`
/// with zero flux through the box boundary.
///
/// Face diffusivities are arithmetic means of `L` at the two adjacent cell
/// centres. Normal derivatives are two-point differences; tangential ones
/// average the central differences of both neighbours (Neumann ghosts at
/// the boundary). Outgoing fluxes of a cell are scaled down when they would
/// drive it negative.
#[derive(Debug, Clone)]
pub struct FpSolver {
    chi: f64,
    dt: f64,
    half_width: f64,
    cells: usize,
    /// `face_l[d][face]` is row `d` of the face-averaged `L`; faces normal to
    /// `d` are indexed by the lower cell and exclude the boundary.
    face_l: [Vec<[f64; 3]>; 3],
}

/// Safety factor on the explicit stability bound.
pub const FP_SAFETY: f64 = 0.9;

impl FpSolver {
    pub fn new(chi: f64, half_width: f64, cells: usize, dt: f64) -> Result<Self> {
        if !(chi > 0.0) || !(dt > 0.0) {
            return Err(Error::Config("chi and dt must be positive".into()));
        }
        let dt_max = Self::stable_dt(chi, half_width, cells)?;
        if dt > dt_max {
            return Err(Error::Stability(format!("dt={dt:e} exceeds the explicit bound {dt_max:e}")));
        }
        let proto = BGridDensity::zeros(half_width, cells)?;
        let m = cells;
        let l_cell: Vec<Matrix3<f64>> = (0..proto.values.len()).map(|i| l_matrix(proto.center(i), chi)).collect();
        let mut face_l: [Vec<[f64; 3]>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (d, faces) in face_l.iter_mut().enumerate() {
            *faces = vec![[0.0; 3]; m * m * m];
            for idx in 0..m * m * m {
                let ix = [idx / (m * m), (idx / m) % m, idx % m];
                if ix[d] + 1 >= m {
                    continue;
                }
                let mut jx = ix;
                jx[d] += 1;
                let j = (jx[0] * m + jx[1]) * m + jx[2];
                let avg = 0.5 * (l_cell[idx] + l_cell[j]);
                faces[idx] = [avg[(d, 0)], avg[(d, 1)], avg[(d, 2)]];
            }
        }
        Ok(Self { chi, dt, half_width, cells, face_l })
    }

    /// `FP_SAFETY h^2 / (2 max_b sum_{de} |L_de(b)|)` over cell centres.
    pub fn stable_dt(chi: f64, half_width: f64, cells: usize) -> Result<f64> {
        let proto = BGridDensity::zeros(half_width, cells)?;
        let h = proto.spacing();
        let worst = (0..proto.values.len()).map(|i| l_matrix(proto.center(i), chi).abs().sum()).fold(0.0, f64::max);
        Ok(FP_SAFETY * h * h / (2.0 * worst))
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn chi(&self) -> f64 {
        self.chi
    }

    pub fn step(&self, rho: &mut BGridDensity) -> Result<()> {
        if rho.cells != self.cells || rho.half_width != self.half_width {
            return Err(Error::Contract("density grid differs from solver grid".into()));
        }
        let m = self.cells;
        let h = rho.spacing();
        let v = &rho.values;
        let at = |i: usize, j: usize, k: usize| v[(i * m + j) * m + k];
        let clamp = |i: isize| i.clamp(0, m as isize - 1) as usize;
        // Central difference of rho along axis `e` at cell `ix` (Neumann ghost).
        let central = |ix: [usize; 3], e: usize| {
            let mut lo = ix;
            let mut hi = ix;
            lo[e] = clamp(ix[e] as isize - 1);
            hi[e] = clamp(ix[e] as isize + 1);
            (at(hi[0], hi[1], hi[2]) - at(lo[0], lo[1], lo[2])) / (2.0 * h)
        };

        // Mass flow J = -(L grad rho) through each interior face, + along d.
        let mut flux: [Vec<f64>; 3] = [vec![0.0; v.len()], vec![0.0; v.len()], vec![0.0; v.len()]];
        for (d, fd) in flux.iter_mut().enumerate() {
            for idx in 0..v.len() {
                let ix = [idx / (m * m), (idx / m) % m, idx % m];
                if ix[d] + 1 >= m {
                    continue;
                }
                let mut jx = ix;
                jx[d] += 1;
                let j = (jx[0] * m + jx[1]) * m + jx[2];
                let row = self.face_l[d][idx];
                let mut g = [0.0; 3];
                g[d] = (v[j] - v[idx]) / h;
                for e in (0..3).filter(|&e| e != d) {
                    g[e] = 0.5 * (central(ix, e) + central(jx, e));
                }
                fd[idx] = -(row[0] * g[0] + row[1] * g[1] + row[2] * g[2]);
            }
        }

        // Positivity limiter on outgoing fluxes.
        let r = self.dt / h;
        let mut outgoing = vec![0.0; v.len()];
        for (d, fd) in flux.iter().enumerate() {
            let stride = m.pow((2 - d) as u32);
            for idx in 0..v.len() {
                let f = fd[idx];
                if f > 0.0 {
                    outgoing[idx] += r * f;
                } else if f < 0.0 {
                    outgoing[idx + stride] -= r * f;
                }
            }
        }
        let scale: Vec<f64> = v
            .iter()
            .zip(&outgoing)
            .map(|(&rho_i, &out)| if out > rho_i && out > 0.0 { rho_i.max(0.0) / out } else { 1.0 })
            .collect();

        let mut next = v.clone();
        for (d, fd) in flux.iter().enumerate() {
            let stride = m.pow((2 - d) as u32);
            for idx in 0..v.len() {
                let f = fd[idx];
                if f == 0.0 {
                    continue;
                }
                let j = idx + stride;
                let f = if f > 0.0 { f * scale[idx] } else { f * scale[j] };
                next[idx] -= r * f;
                next[j] += r * f;
            }
        }
        rho.values = next;
        Ok(())
    }

    /// Advances `steps` steps, recording moments every `every` steps (and at
    /// the start and end).
    pub fn evolve(&self, rho: &mut BGridDensity, steps: usize, every: usize) -> Result<Vec<MomentSample>> {
        let every = every.max(1);
        let mut out = vec![MomentSample::of(0.0, rho)];
        for s in 1..=steps {
            self.step(rho)?;
            if s % every == 0 || s == steps {
                out.push(MomentSample::of(s as f64 * self.dt, rho));
            }
        }
        Ok(out)
    }
}

/// Least-squares slope of `ln m2` against `t`.
pub fn fitted_growth_rate(samples: &[MomentSample]) -> Result<f64> {
    let t: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.m2.ln()).collect();
    crate::stats::fit_slope(&t, &y)
}

/// `[int f rho(t_last) - int f rho(t_first)] - int int div(L grad f) rho`,
/// the time integral taken by the trapezoid rule over the snapshots.
pub fn weak_form_residual(snapshots: &[(f64, BGridDensity)], f: &dyn BTestFunction, chi: f64) -> Result<f64> {
    if snapshots.len() < 2 {
        return Err(Error::InvalidInput("need at least two snapshots".into()));
    }
    let first = &snapshots[0].1;
    let m = first.cells;
    let scale = first.values.iter().enumerate().map(|(i, _)| f.value(first.center(i)).abs()).fold(0.0, f64::max);
    for idx in 0..first.values.len() {
        let ix = [idx / (m * m), (idx / m) % m, idx % m];
        if ix.iter().any(|&c| c == 0 || c == m - 1) && f.value(first.center(idx)).abs() > 1e-12 * scale.max(1.0) {
            return Err(Error::Contract("test function support touches the box boundary".into()));
        }
    }
    let pair = |rho: &BGridDensity| rho.integrate(|b| f.value(b));
    let gen = |rho: &BGridDensity| rho.integrate(|b| limit_generator(f, b, chi));
    let mut integral = 0.0;
    for w in snapshots.windows(2) {
        integral += 0.5 * (w[1].0 - w[0].0) * (gen(&w[0].1) + gen(&w[1].1));
    }
    let last = &snapshots[snapshots.len() - 1].1;
    Ok(pair(last) - pair(first) - integral)
}

/// `int phi(theta) psi dmu(t)` for the limit scalar Young measure, computed
/// as `<exp(kappa_T t Lap)(phi o theta0), psi>`.
pub fn scalar_limit_pairing(
    theta0: &SpectralScalarField,
    t: f64,
    kappa_t: f64,
    phi: impl Fn(f64) -> f64,
    psi: impl Fn([f64; 3]) -> f64,
) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("t must be nonnegative, got {t}")));
    }
    let grid = theta0.grid();
    let composed: Vec<f64> = theta0.to_physical().into_iter().map(phi).collect();
    let mut coeffs = grid.analyze(&composed);
    for (c, k2) in coeffs.iter_mut().zip(grid.wavenumber_sq()) {
        *c *= (-kappa_t * k2 * t).exp();
    }
    let evolved = grid.synthesize(&coeffs);
    let cell = grid.volume() / grid.len() as f64;
    Ok((0..grid.len()).map(|i| evolved[i] * psi(grid.point(i))).sum::<f64>() * cell)
}
