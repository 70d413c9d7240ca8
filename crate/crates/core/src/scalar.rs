//! Stochastic passive scalar in a truncated Fourier basis.
//!
//! Itô form: `d theta = kappa_T Lap theta dt + sum_{k,j} sigma_{k,j} . grad theta dW^{k,j}`.
//! The midpoint scheme integrates the Stratonovich form, whose transport
//! operator is skew-adjoint on the Galerkin space, so it preserves the L2
//! norm up to the fixed-point tolerance. Euler-Maruyama on the Itô form is
//! kept as a cross-check.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{norm2, sample_increments, NoiseBasis, NoiseRealization};
use crate::rng::StreamKey;
use crate::spectral::{project_real, SpectralGrid, SpectralScalarField};
use crate::stats::Estimate;

/// Upper bound on `dt kappa_T K_max^2`.
pub const STABILITY_BOUND: f64 = 0.5;
const MIDPOINT_TOL: f64 = 1e-13;
const MIDPOINT_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalarScheme {
    #[default]
    Midpoint,
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarRunConfig {
    pub d: usize,
    pub n: u32,
    pub kappa_t: f64,
    pub k_max: u32,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    #[serde(default)]
    pub scheme: ScalarScheme,
}

impl ScalarRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d != 2 && self.d != 3 {
            return Err(Error::Config(format!("d must be 2 or 3, got {}", self.d)));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be >= 1".into()));
        }
        if !(self.kappa_t > 0.0) || !(self.dt > 0.0) || !(self.t_end >= 0.0) {
            return Err(Error::Config("kappa_t and dt must be positive, t_end nonnegative".into()));
        }
        if self.k_max < 2 * self.n {
            return Err(Error::Config(format!("k_max={} does not resolve the shell 2n={}", self.k_max, 2 * self.n)));
        }
        let cfl = self.dt * self.kappa_t * (self.k_max as f64).powi(2);
        if cfl > STABILITY_BOUND {
            return Err(Error::Stability(format!("dt kappa_T K_max^2 = {cfl:.3} exceeds {STABILITY_BOUND}")));
        }
        step_count(self.t_end, self.dt).map(|_| ())
    }

    pub fn steps(&self) -> usize {
        step_count(self.t_end, self.dt).unwrap_or(0)
    }
}

/// Number of steps of size `dt` covering `[0, t_end]`; `t_end` must be a
/// multiple of `dt`.
pub fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    let steps = (t_end / dt).round();
    if (steps * dt - t_end).abs() > 1e-9 * t_end.max(dt) {
        return Err(Error::Config(format!("t_end={t_end} is not a multiple of dt={dt}")));
    }
    Ok(steps as usize)
}

/// Solver for one configuration; cheap to share between paths.
#[derive(Debug, Clone)]
pub struct ScalarSolver {
    cfg: ScalarRunConfig,
    grid: Arc<SpectralGrid>,
    basis: NoiseBasis,
    slots: Vec<usize>,
}

impl ScalarSolver {
    pub fn new(cfg: ScalarRunConfig) -> Result<Self> {
        cfg.validate()?;
        let basis = NoiseBasis::scalar(cfg.d, cfg.n, cfg.kappa_t)?;
        Self::with_basis(cfg, basis)
    }

    /// Solver with a caller-supplied noise basis (for instance an empty one).
    pub fn with_basis(cfg: ScalarRunConfig, basis: NoiseBasis) -> Result<Self> {
        cfg.validate()?;
        if basis.dim() != cfg.d {
            return Err(Error::Config("noise basis dimension differs from d".into()));
        }
        let grid = SpectralGrid::new(cfg.d, cfg.k_max)?;
        let slots = noise_slots(&grid, &basis)?;
        Ok(Self { cfg, grid, basis, slots })
    }

    pub fn config(&self) -> &ScalarRunConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub fn basis(&self) -> &NoiseBasis {
        &self.basis
    }

    /// Rejects initial data whose active modes exceed `K_max - 2n`.
    pub fn check_initial(&self, theta0: &SpectralScalarField) -> Result<()> {
        let limit = (self.cfg.k_max - 2 * self.cfg.n) as i64;
        let peak = theta0.coeffs().iter().map(|c| c.norm()).fold(0.0, f64::max);
        for (i, c) in theta0.coeffs().iter().enumerate() {
            if c.norm() > 1e-12 * peak && norm2(self.grid.wave_vector(i)) > limit * limit {
                return Err(Error::Config(format!(
                    "initial mode {:?} exceeds K_max - 2n = {limit}",
                    self.grid.wave_vector(i)
                )));
            }
        }
        Ok(())
    }

    /// Physical velocity increment `sum sigma_{k,j} dW^{k,j}`, one array per
    /// component.
    pub fn velocity(&self, noise: &NoiseRealization) -> Result<Vec<Vec<f64>>> {
        check_noise(&self.basis, noise, self.cfg.dt)?;
        Ok(synthesize_velocity(&self.grid, &self.basis, &self.slots, noise, self.cfg.d))
    }

    /// `P_K(u . grad theta)` for a physical velocity `u`.
    pub fn transport(&self, u: &[Vec<f64>], theta: &[Complex64]) -> Vec<Complex64> {
        let g = &self.grid;
        let d = self.cfg.d;
        let grads: Vec<Vec<Complex64>> = (0..d)
            .map(|c| g.wavenumbers(c).iter().zip(theta).map(|(&k, &t)| Complex64::new(-k * t.im, k * t.re)).collect())
            .collect();
        let phys = g.synthesize_many(&grads);
        let prod: Vec<f64> = (0..g.len()).map(|i| (0..d).map(|c| u[c][i] * phys[c][i]).sum()).collect();
        let mut out = g.analyze(&prod);
        project_real(g, &mut out);
        out
    }

    pub fn step(&self, theta: &SpectralScalarField, noise: &NoiseRealization) -> Result<SpectralScalarField> {
        self.step_with(theta, noise, self.cfg.scheme)
    }

    pub fn step_with(
        &self,
        theta: &SpectralScalarField,
        noise: &NoiseRealization,
        scheme: ScalarScheme,
    ) -> Result<SpectralScalarField> {
        let u = self.velocity(noise)?;
        let t0 = theta.coeffs();
        let mut next = match scheme {
            ScalarScheme::EulerMaruyama => {
                let tr = self.transport(&u, t0);
                let kdt = self.cfg.kappa_t * self.cfg.dt;
                (0..t0.len()).map(|i| t0[i] * (1.0 - kdt * self.grid.wavenumber_sq()[i]) + tr[i]).collect()
            }
            ScalarScheme::Midpoint => self.midpoint(&u, t0)?,
        };
        project_real(&self.grid, &mut next);
        SpectralScalarField::from_coeffs(&self.grid, next)
    }

    /// Solves `(I - T/2) theta1 = (I + T/2) theta0`. `T` is skew-adjoint, so
    /// the normal equations `(I - T^2/4) theta1 = (I + T/2)^2 theta0` are
    /// symmetric positive definite and solved by conjugate gradients.
    fn midpoint(&self, u: &[Vec<f64>], t0: &[Complex64]) -> Result<Vec<Complex64>> {
        let apply = |x: &[Complex64]| self.transport(u, x);
        cayley_solve(t0, apply)
    }

    /// Runs one path from `theta0`, calling `observe(step, t, field)` after
    /// the initial condition and after every step.
    pub fn run(
        &self,
        theta0: &SpectralScalarField,
        path: u64,
        mut observe: impl FnMut(usize, f64, &SpectralScalarField),
    ) -> Result<SpectralScalarField> {
        let key = StreamKey::new(self.cfg.seed, path, 0);
        self.run_keyed(theta0, key, self.cfg.steps(), &mut observe)
    }

    fn run_keyed(
        &self,
        theta0: &SpectralScalarField,
        key: StreamKey,
        steps: usize,
        observe: &mut dyn FnMut(usize, f64, &SpectralScalarField),
    ) -> Result<SpectralScalarField> {
        let mut theta = theta0.clone();
        observe(0, 0.0, &theta);
        for s in 0..steps {
            let noise = sample_increments(&self.basis, self.cfg.dt, key.at_step(s as u64))?;
            theta = self.step(&theta, &noise)?;
            observe(s + 1, (s + 1) as f64 * self.cfg.dt, &theta);
        }
        Ok(theta)
    }
}

fn dot(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Conjugate-gradient solve of the Cayley system for a skew-adjoint
/// operator `t`, shared by the scalar and Lagrangian midpoint steps.
pub(crate) fn cayley_solve(t0: &[Complex64], t: impl Fn(&[Complex64]) -> Vec<Complex64>) -> Result<Vec<Complex64>> {
    let norm0 = dot(t0, t0).sqrt();
    if norm0 == 0.0 {
        return Ok(t0.to_vec());
    }
    let normal = |x: &[Complex64]| -> Vec<Complex64> {
        let tt = t(&t(x));
        x.iter().zip(tt).map(|(a, b)| a - 0.25 * b).collect()
    };
    let tb = t(t0);
    let ttb = t(&tb);
    let rhs: Vec<Complex64> = (0..t0.len()).map(|i| t0[i] + tb[i] + 0.25 * ttb[i]).collect();
    let rhs_norm = dot(&rhs, &rhs).sqrt();
    let mut x: Vec<Complex64> = t0.iter().zip(&tb).map(|(a, b)| a + b).collect();
    let ax = normal(&x);
    let mut r: Vec<Complex64> = rhs.iter().zip(ax).map(|(a, b)| a - b).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for _ in 0..MIDPOINT_MAX_ITER {
        if rr.sqrt() <= MIDPOINT_TOL * rhs_norm {
            return Ok(x);
        }
        let ap = normal(&p);
        let alpha = rr / dot(&p, &ap);
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
    }
    if rr.sqrt() <= MIDPOINT_TOL * rhs_norm {
        return Ok(x);
    }
    Err(Error::NoConvergence { iterations: MIDPOINT_MAX_ITER, residual: rr.sqrt() / rhs_norm })
}

pub(crate) fn noise_slots(grid: &SpectralGrid, basis: &NoiseBasis) -> Result<Vec<usize>> {
    basis
        .modes()
        .iter()
        .map(|m| {
            grid.index_of(m.index.k)
                .filter(|&i| grid.in_galerkin(i))
                .ok_or_else(|| Error::Config(format!("noise mode {:?} not resolved by K_max", m.index.k)))
        })
        .collect()
}

pub(crate) fn check_noise(basis: &NoiseBasis, noise: &NoiseRealization, dt: f64) -> Result<()> {
    if noise.increments.len() != basis.len() {
        return Err(Error::LengthMismatch { expected: basis.len(), got: noise.increments.len() });
    }
    if (noise.dt - dt).abs() > 1e-12 * dt {
        return Err(Error::Contract(format!("noise drawn with dt={} but solver uses dt={dt}", noise.dt)));
    }
    Ok(())
}

pub(crate) fn synthesize_velocity(
    grid: &SpectralGrid,
    basis: &NoiseBasis,
    slots: &[usize],
    noise: &NoiseRealization,
    comps: usize,
) -> Vec<Vec<f64>> {
    let mut spec = vec![vec![Complex64::new(0.0, 0.0); grid.len()]; comps];
    for ((m, &slot), w) in basis.modes().iter().zip(slots).zip(&noise.increments) {
        for (c, s) in spec.iter_mut().enumerate() {
            s[slot] += m.theta * m.a[c] * w;
        }
    }
    grid.synthesize_many(&spec)
}

/// `||theta||_{L2}`.
pub fn l2_norm(theta: &SpectralScalarField) -> f64 {
    theta.norm_sq().sqrt()
}

/// Exact heat semigroup `c_k -> exp(-kappa_T |k|^2 t) c_k`.
pub fn heat_limit(theta0: &SpectralScalarField, t: f64, kappa_t: f64) -> Result<SpectralScalarField> {
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("heat_limit needs t >= 0, got {t}")));
    }
    let grid = theta0.grid().clone();
    let mut out = theta0.clone();
    for (i, c) in out.coeffs_mut().iter_mut().enumerate() {
        *c *= (-kappa_t * norm2(grid.wave_vector(i)) as f64 * t).exp();
    }
    Ok(out)
}

/// Monte Carlo estimate of `E <theta^n_T - theta_bar_T, psi>^2`.
pub fn weak_error(
    paths: &[SpectralScalarField],
    theta_bar: &SpectralScalarField,
    psi: &SpectralScalarField,
) -> Result<Estimate> {
    let target = theta_bar.inner(psi);
    let samples: Vec<f64> = paths.iter().map(|p| (p.inner(psi) - target).powi(2)).collect();
    Estimate::from_samples(&samples)
}

/// Smallest and largest physical value (maximum-principle diagnostic).
pub fn physical_range(theta: &SpectralScalarField) -> (f64, f64) {
    theta.to_physical().into_iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenormalizationReport {
    /// `sup_t ||phi(theta_t) - vartheta_t||_{L2}`.
    pub discrepancy: f64,
    /// `(t, ||phi(theta_t) - vartheta_t||_{L2})` at each output time.
    pub series: Vec<(f64, f64)>,
}

/// Compares `phi(theta_t)` with the solution `vartheta_t` started from
/// `phi(theta0)` under the same noise path. The mean of `phi(theta0)` is
/// carried separately because fields are stored with zero mean.
pub fn renormalization_check(
    solver: &ScalarSolver,
    theta0: &SpectralScalarField,
    phi: impl Fn(f64) -> f64,
    path_a: StreamKey,
    path_b: StreamKey,
    steps: usize,
    output_every: usize,
) -> Result<RenormalizationReport> {
    if path_a != path_b {
        return Err(Error::Contract("renormalization check needs both runs on one noise path".into()));
    }
    let grid = solver.grid().clone();
    let cell = (2.0 * std::f64::consts::PI / grid.size() as f64).powi(grid.dim() as i32);
    let composed0: Vec<f64> = theta0.to_physical().into_iter().map(&phi).collect();
    let mean0 = composed0.iter().sum::<f64>() / composed0.len() as f64;
    let vartheta0 = SpectralScalarField::from_physical(&grid, &composed0);

    let every = output_every.max(1);
    let mut theta_snaps = Vec::new();
    solver.run_keyed(theta0, path_a, steps, &mut |s, t, f| {
        if s % every == 0 || s == steps {
            theta_snaps.push((t, f.to_physical()));
        }
    })?;
    let mut var_snaps = Vec::new();
    solver.run_keyed(&vartheta0, path_b, steps, &mut |s, _, f| {
        if s % every == 0 || s == steps {
            var_snaps.push(f.to_physical());
        }
    })?;

    let series: Vec<(f64, f64)> = theta_snaps
        .iter()
        .zip(&var_snaps)
        .map(|((t, th), v)| {
            let err: f64 = th.iter().zip(v).map(|(&a, &b)| (phi(a) - mean0 - b).powi(2)).sum();
            (*t, (err * cell).sqrt())
        })
        .collect();
    let discrepancy = series.iter().map(|s| s.1).fold(0.0, f64::max);
    Ok(RenormalizationReport { discrepancy, series })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::SpectralGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(d: usize, n: u32, k_max: u32, dt: f64) -> ScalarRunConfig {
        ScalarRunConfig { d, n, kappa_t: 1.0, k_max, dt, t_end: 10.0 * dt, seed: 3, scheme: ScalarScheme::Midpoint }
    }

    fn random_field(grid: &Arc<SpectralGrid>, band: i64, seed: u64) -> SpectralScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..grid.len())
            .map(|i| {
                let z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                if norm2(grid.wave_vector(i)) <= band * band {
                    z
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        SpectralScalarField::from_coeffs(grid, coeffs).unwrap()
    }

    /// Dense matrix of `theta -> P_K(u . grad theta)` over the Galerkin set,
    /// assembled from the mode-coupling formula
    /// `(u . grad theta)_p = sum_m theta_m dW_m (a_m . i(p - k_m)) theta_{p - k_m}`.
    fn coupling_matrix(solver: &ScalarSolver, noise: &NoiseRealization) -> (Vec<usize>, Vec<Vec<Complex64>>) {
        let g = solver.grid();
        let set: Vec<usize> = (0..g.len()).filter(|&i| g.in_galerkin(i)).collect();
        let pos: std::collections::HashMap<usize, usize> = set.iter().enumerate().map(|(r, &i)| (i, r)).collect();
        let mut m = vec![vec![Complex64::new(0.0, 0.0); set.len()]; set.len()];
        for (r, &i) in set.iter().enumerate() {
            let p = g.wave_vector(i);
            for (mode, w) in solver.basis().modes().iter().zip(&noise.increments) {
                let k = mode.index.k;
                let q = [p[0] - k[0], p[1] - k[1], p[2] - k[2]];
                let Some(j) = g.index_of(q) else { continue };
                let Some(&col) = pos.get(&j) else { continue };
                let adot: f64 = (0..3).map(|c| mode.a[c] * q[c] as f64).sum();
                m[r][col] += mode.theta * w * Complex64::new(0.0, adot);
            }
        }
        (set, m)
    }

    #[test]
    fn zero_field_stays_zero() {
        let s = ScalarSolver::new(cfg(2, 1, 4, 1e-3)).unwrap();
        let z = SpectralScalarField::zeros(s.grid());
        let out = s.run(&z, 0, |_, _, _| {}).unwrap();
        assert_eq!(out.norm_sq(), 0.0);
    }

    #[test]
    fn no_noise_modes_means_no_dynamics() {
        let c = cfg(2, 1, 4, 1e-3);
        let s = ScalarSolver::with_basis(c, NoiseBasis::empty(2).unwrap()).unwrap();
        let f = random_field(s.grid(), 2, 1);
        let noise = NoiseRealization::zero(s.basis(), c.dt, StreamKey::new(0, 0, 0));
        let out = s.step(&f, &noise).unwrap();
        for (a, b) in out.coeffs().iter().zip(f.coeffs()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn euler_step_matches_dense_oracle() {
        let c = cfg(2, 1, 4, 1e-3);
        let s = ScalarSolver::new(c).unwrap();
        let f = random_field(s.grid(), 4, 7);
        let noise = sample_increments(s.basis(), c.dt, StreamKey::new(1, 2, 3)).unwrap();
        let (set, m) = coupling_matrix(&s, &noise);
        assert!(set.len() <= 100);
        let out = s.step_with(&f, &noise, ScalarScheme::EulerMaruyama).unwrap();
        for (r, &i) in set.iter().enumerate() {
            let p2 = norm2(s.grid().wave_vector(i)) as f64;
            let mut expect = f.coeffs()[i] * (1.0 - c.kappa_t * c.dt * p2);
            for (col, &j) in set.iter().enumerate() {
                expect += m[r][col] * f.coeffs()[j];
            }
            assert!((out.coeffs()[i] - expect).norm() < 1e-14, "mode {:?}", s.grid().wave_vector(i));
        }
    }

    #[test]
    fn midpoint_solves_cayley_system_and_conserves_norm() {
        let c = cfg(2, 1, 4, 1e-3);
        let s = ScalarSolver::new(c).unwrap();
        let f = random_field(s.grid(), 2, 8);
        let noise = sample_increments(s.basis(), c.dt, StreamKey::new(1, 2, 4)).unwrap();
        let (set, m) = coupling_matrix(&s, &noise);
        let out = s.step(&f, &noise).unwrap();
        for (r, &i) in set.iter().enumerate() {
            let mut lhs = out.coeffs()[i];
            let mut rhs = f.coeffs()[i];
            for (col, &j) in set.iter().enumerate() {
                lhs -= 0.5 * m[r][col] * out.coeffs()[j];
                rhs += 0.5 * m[r][col] * f.coeffs()[j];
            }
            assert!((lhs - rhs).norm() < 1e-13);
        }
        assert!((out.norm_sq() - f.norm_sq()).abs() < 1e-12 * f.norm_sq());
    }

    #[test]
    fn output_is_real_with_zero_mean() {
        let s = ScalarSolver::new(cfg(3, 1, 4, 1e-3)).unwrap();
        let f = random_field(s.grid(), 2, 9);
        let out = s.run(&f, 1, |_, _, _| {}).unwrap();
        assert!(out.reality_defect() < 1e-15);
        assert_eq!(out.coeff([0, 0, 0]), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(2, 4, 6, 1e-4);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.k_max = 16;
        c.dt = 0.01;
        c.t_end = 0.1;
        assert!(matches!(c.validate(), Err(Error::Stability(_))));
        let s = ScalarSolver::new(cfg(2, 1, 4, 1e-3)).unwrap();
        let wide = SpectralScalarField::from_modes(s.grid(), &[([3, 0, 0], Complex64::new(1.0, 0.0))]).unwrap();
        assert!(s.check_initial(&wide).is_err());
    }

    #[test]
    fn mismatched_noise_is_rejected() {
        let s = ScalarSolver::new(cfg(2, 1, 4, 1e-3)).unwrap();
        let other = NoiseBasis::scalar(2, 2, 1.0).unwrap();
        let noise = sample_increments(&other, 1e-3, StreamKey::new(0, 0, 0)).unwrap();
        let f = SpectralScalarField::zeros(s.grid());
        assert!(matches!(s.step(&f, &noise), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn heat_limit_values() {
        let g = SpectralGrid::new(2, 4).unwrap();
        let f = random_field(&g, 3, 2);
        let same = heat_limit(&f, 0.0, 1.0).unwrap();
        assert_eq!(same.coeffs(), f.coeffs());
        let one = SpectralScalarField::from_modes(&g, &[([1, 0, 0], Complex64::new(1.0, 0.0))]).unwrap();
        let decayed = heat_limit(&one, 1.0, 1.0).unwrap();
        assert!((decayed.coeff([1, 0, 0]).re - (-1f64).exp()).abs() < 1e-15);
        let t = 0.3;
        assert!(l2_norm(&heat_limit(&f, t, 1.0).unwrap()) <= l2_norm(&f) * (-t).exp() * (1.0 + 1e-14));
        assert!(heat_limit(&f, -1.0, 1.0).is_err());
    }

    #[test]
    fn weak_error_trivial_cases() {
        let g = SpectralGrid::new(2, 4).unwrap();
        let bar = random_field(&g, 2, 4);
        let e = weak_error(&[bar.clone(), bar.clone()], &bar, &random_field(&g, 3, 5)).unwrap();
        assert_eq!(e.mean, 0.0);
        let low = SpectralScalarField::from_modes(&g, &[([1, 0, 0], Complex64::new(1.0, 0.0))]).unwrap();
        let psi = SpectralScalarField::from_modes(&g, &[([3, 1, 0], Complex64::new(1.0, 0.0))]).unwrap();
        let e = weak_error(std::slice::from_ref(&low), &SpectralScalarField::zeros(&g), &psi).unwrap();
        assert_eq!(e.mean, 0.0);
        assert!(matches!(weak_error(&[], &bar, &psi), Err(Error::EmptyEnsemble)));
    }

    #[test]
    fn renormalization_trivial_cases() {
        let mut c = cfg(2, 1, 8, 1e-3);
        c.t_end = 0.02;
        let s = ScalarSolver::new(c).unwrap();
        let f = SpectralScalarField::from_fn(s.grid(), |x| x[0].cos() + 0.5 * x[1].sin());
        let key = StreamKey::new(5, 0, 0);
        let id = renormalization_check(&s, &f, |v| v, key, key, 20, 5).unwrap();
        assert!(id.discrepancy < 1e-13);
        let constant = renormalization_check(&s, &f, |_| 2.0, key, key, 20, 5).unwrap();
        assert!(constant.discrepancy < 1e-12);
        let other = StreamKey::new(6, 0, 0);
        assert!(matches!(renormalization_check(&s, &f, |v| v, key, other, 20, 5), Err(Error::Contract(_))));
    }

    #[test]
    fn renormalization_square_self_converges() {
        let t_end = 0.05;
        let run = |k_max: u32, dt: f64| {
            let c =
                ScalarRunConfig { d: 2, n: 1, kappa_t: 1.0, k_max, dt, t_end, seed: 1, scheme: ScalarScheme::Midpoint };
            let s = ScalarSolver::new(c).unwrap();
            let f = SpectralScalarField::from_fn(s.grid(), |x| x[0].cos());
            let steps = c.steps();
            (0..4u64)
                .map(|p| {
                    let key = StreamKey::new(2, p, 0);
                    renormalization_check(&s, &f, |v| v * v, key, key, steps, steps).unwrap().discrepancy
                })
                .sum::<f64>()
                / 4.0
        };
        let coarse = run(8, 2e-3);
        let fine = run(16, 1e-3);
        assert!(fine <= 0.5 * coarse, "coarse {coarse} fine {fine}");
    }
}
