//! Stochastic passive vector field (magnetic field) with transport and
//! stretching noise.
//!
//! Itô form: `dB = c Lap B dt + sum (sigma . grad B - B . grad sigma) dW`
//! with `c = (2/3) chi eta_n`. The noise term is `curl(B x u)` for the
//! divergence-free velocity increment `u`, which is how it is evaluated.
//! Euler-Maruyama is the only scheme: stretching breaks skew-symmetry.

use std::sync::Arc;

use nalgebra::Matrix3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{norm2, sample_increments, shell_sums, NoiseBasis, NoiseRealization};
use crate::rng::StreamKey;
use crate::scalar::{check_noise, noise_slots, step_count, synthesize_velocity};
use crate::spectral::{leray_in_place, SpectralGrid, SpectralVectorField};
use crate::stats::Estimate;
use crate::vlasov::LnTensor;

/// Upper bound on the expected relative energy increment per step,
/// `(4/3) chi alpha_n dt`.
pub const ENERGY_STEP_BOUND: f64 = 1e-3;
/// Upper bound on `dt c K_max^2`.
pub const DIFFUSION_BOUND: f64 = 0.5;

fn default_chi() -> f64 {
    1.0
}

fn default_gamma() -> f64 {
    4.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorRunConfig {
    pub n: u32,
    #[serde(default = "default_chi")]
    pub chi: f64,
    pub k_max: u32,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    /// Moment order for sup-norm diagnostics.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

impl VectorRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be >= 1".into()));
        }
        if !(self.chi > 0.0) || !(self.dt > 0.0) || !(self.t_end >= 0.0) {
            return Err(Error::Config("chi and dt must be positive, t_end nonnegative".into()));
        }
        if !(self.gamma >= 4.0) {
            return Err(Error::Config(format!("gamma must be >= 4, got {}", self.gamma)));
        }
        if self.k_max < 2 * self.n {
            return Err(Error::Config(format!("k_max={} does not resolve the shell 2n={}", self.k_max, 2 * self.n)));
        }
        let sums = shell_sums(self.n, 3)?;
        let growth = 4.0 / 3.0 * self.chi * sums.alpha_n * self.dt;
        if growth > ENERGY_STEP_BOUND {
            return Err(Error::Stability(format!(
                "expected energy increment {growth:.2e} per step exceeds {ENERGY_STEP_BOUND:e}"
            )));
        }
        let diff = self.dt * 2.0 / 3.0 * self.chi * sums.eta_n * (self.k_max as f64).powi(2);
        if diff > DIFFUSION_BOUND {
            return Err(Error::Stability(format!("dt c K_max^2 = {diff:.3} exceeds {DIFFUSION_BOUND}")));
        }
        step_count(self.t_end, self.dt).map(|_| ())
    }

    pub fn steps(&self) -> usize {
        step_count(self.t_end, self.dt).unwrap_or(0)
    }

    /// Largest step satisfying both stability bounds.
    pub fn max_stable_dt(n: u32, chi: f64, k_max: u32) -> Result<f64> {
        let sums = shell_sums(n, 3)?;
        let a = ENERGY_STEP_BOUND / (4.0 / 3.0 * chi * sums.alpha_n);
        let b = DIFFUSION_BOUND / (2.0 / 3.0 * chi * sums.eta_n * (k_max as f64).powi(2));
        Ok(a.min(b))
    }
}

/// Energy bookkeeping of one Euler-Maruyama step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepDiagnostics {
    /// `||B_{m+1}||^2 - ||B_m||^2`.
    pub energy_increment: f64,
    /// `2 <B_m, G>` with `G` the noise increment of the step.
    pub martingale: f64,
    /// `(4/3) chi alpha_n ||B_m||^2 dt`.
    pub drift: f64,
    /// `||(I - P_K) curl(B x u)||^2`, the part of the noise increment
    /// discarded by the Galerkin truncation.
    pub truncation_loss: f64,
}

/// One step of a path, passed to run observers.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord<'a> {
    pub step: usize,
    pub t: f64,
    pub before: &'a SpectralVectorField,
    pub noise: &'a NoiseRealization,
    pub after: &'a SpectralVectorField,
    pub diagnostics: StepDiagnostics,
}

#[derive(Debug, Clone)]
pub struct VectorSolver {
    cfg: VectorRunConfig,
    grid: Arc<SpectralGrid>,
    basis: NoiseBasis,
    slots: Vec<usize>,
    diffusivity: f64,
    alpha_n: f64,
}

impl VectorSolver {
    pub fn new(cfg: VectorRunConfig) -> Result<Self> {
        cfg.validate()?;
        let basis = NoiseBasis::vector(cfg.n, cfg.chi)?;
        let grid = SpectralGrid::for_products(3, cfg.k_max, 2 * cfg.n)?;
        let slots = noise_slots(&grid, &basis)?;
        let sums = shell_sums(cfg.n, 3)?;
        Ok(Self { cfg, grid, basis, slots, diffusivity: 2.0 / 3.0 * cfg.chi * sums.eta_n, alpha_n: sums.alpha_n })
    }

    pub fn config(&self) -> &VectorRunConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub fn basis(&self) -> &NoiseBasis {
        &self.basis
    }

    /// Itô diffusivity `(2/3) chi eta_n`.
    pub fn diffusivity(&self) -> f64 {
        self.diffusivity
    }

    /// Rejects initial data that is not divergence-free or has active modes
    /// beyond `K_max - 2n`.
    pub fn check_initial(&self, b0: &SpectralVectorField) -> Result<()> {
        if b0.grid().size() != self.grid.size() {
            return Err(Error::Contract("initial field lives on a different grid".into()));
        }
        let limit = (self.cfg.k_max - 2 * self.cfg.n) as i64;
        let amp = |i: usize| (0..3).map(|c| b0.component(c)[i].norm_sqr()).sum::<f64>().sqrt();
        let peak = (0..self.grid.len()).map(amp).fold(0.0, f64::max);
        for i in 0..self.grid.len() {
            if amp(i) > 1e-12 * peak && norm2(self.grid.wave_vector(i)) > limit * limit {
                return Err(Error::Config(format!(
                    "initial mode {:?} exceeds K_max - 2n = {limit}",
                    self.grid.wave_vector(i)
                )));
            }
        }
        if b0.max_divergence() > 1e-12 * peak.max(1.0) {
            return Err(Error::InvalidInput("initial field is not divergence-free".into()));
        }
        Ok(())
    }

    /// Physical velocity increment, one array per component.
    pub fn velocity(&self, noise: &NoiseRealization) -> Result<Vec<Vec<f64>>> {
        check_noise(&self.basis, noise, self.cfg.dt)?;
        Ok(synthesize_velocity(&self.grid, &self.basis, &self.slots, noise, 3))
    }

    /// `P_K curl(B x u)` for a physical velocity `u`.
    pub fn noise_term(&self, b: &SpectralVectorField, u: &[Vec<f64>]) -> SpectralVectorField {
        self.noise_term_with_loss(b, u).0
    }

    fn noise_term_with_loss(&self, b: &SpectralVectorField, u: &[Vec<f64>]) -> (SpectralVectorField, f64) {
        let g = &self.grid;
        let (p0, p1) = g.synthesize_pair(b.component(0), b.component(1));
        let phys = [p0, p1, g.synthesize(b.component(2))];
        let mut e = [vec![0.0; g.len()], vec![0.0; g.len()], vec![0.0; g.len()]];
        for i in 0..g.len() {
            let (b0, b1, b2) = (phys[0][i], phys[1][i], phys[2][i]);
            let (u0, u1, u2) = (u[0][i], u[1][i], u[2][i]);
            e[0][i] = b1 * u2 - b2 * u1;
            e[1][i] = b2 * u0 - b0 * u2;
            e[2][i] = b0 * u1 - b1 * u0;
        }
        let (e0, e1) = g.analyze_pair(&e[0], &e[1]);
        let e2 = g.analyze(&e[2]);
        let ik = |c: usize, i: usize, v: Complex64| Complex64::new(0.0, g.wavenumbers(c)[i]) * v;
        let zero = vec![Complex64::new(0.0, 0.0); g.len()];
        let mut out = [zero.clone(), zero.clone(), zero];
        let mut loss = 0.0;
        for i in 0..g.len() {
            let curl = [
                ik(1, i, e2[i]) - ik(2, i, e1[i]),
                ik(2, i, e0[i]) - ik(0, i, e2[i]),
                ik(0, i, e1[i]) - ik(1, i, e0[i]),
            ];
            if g.in_galerkin(i) {
                for c in 0..3 {
                    out[c][i] = curl[c];
                }
            } else {
                loss += curl.iter().map(|z| z.norm_sqr()).sum::<f64>();
            }
        }
        let field = SpectralVectorField::from_components(g, out).expect("grid-sized components");
        (field, loss * g.volume())
    }

    pub fn step(&self, b: &SpectralVectorField, noise: &NoiseRealization) -> Result<SpectralVectorField> {
        self.step_detailed(b, noise).map(|(f, _)| f)
    }

    /// Euler-Maruyama step followed by Leray projection, with the energy
    /// bookkeeping of the step.
    pub fn step_detailed(
        &self,
        b: &SpectralVectorField,
        noise: &NoiseRealization,
    ) -> Result<(SpectralVectorField, StepDiagnostics)> {
        let u = self.velocity(noise)?;
        let (g, truncation_loss) = self.noise_term_with_loss(b, &u);
        let mut next = b.clone();
        let c = self.diffusivity * self.cfg.dt;
        let k2 = self.grid.wavenumber_sq();
        for comp in next.components_mut().iter_mut() {
            for (v, &q) in comp.iter_mut().zip(k2) {
                *v *= 1.0 - c * q;
            }
        }
        next.axpy(1.0, &g);
        leray_in_place(&mut next);
        next.project();
        let e0 = b.norm_sq();
        let diag = StepDiagnostics {
            energy_increment: next.norm_sq() - e0,
            martingale: 2.0 * b.inner(&g),
            drift: 4.0 / 3.0 * self.cfg.chi * self.alpha_n * e0 * self.cfg.dt,
            truncation_loss,
        };
        Ok((next, diag))
    }

    /// Runs one path from `b0`; `observe` sees every step.
    pub fn run(
        &self,
        b0: &SpectralVectorField,
        path: u64,
        mut observe: impl FnMut(&StepRecord),
    ) -> Result<SpectralVectorField> {
        let key = StreamKey::new(self.cfg.seed, path, 0);
        let mut b = b0.clone();
        for s in 0..self.cfg.steps() {
            let noise = sample_increments(&self.basis, self.cfg.dt, key.at_step(s as u64))?;
            let (next, diagnostics) = self.step_detailed(&b, &noise)?;
            observe(&StepRecord {
                step: s + 1,
                t: (s + 1) as f64 * self.cfg.dt,
                before: &b,
                noise: &noise,
                after: &next,
                diagnostics,
            });
            b = next;
        }
        Ok(b)
    }
}

/// `||B||^2`.
pub fn energy(b: &SpectralVectorField) -> f64 {
    b.norm_sq()
}

/// `<B, phi>`.
pub fn mean_field_pairing(b: &SpectralVectorField, phi: &SpectralVectorField) -> Result<f64> {
    if b.grid().size() != phi.grid().size() {
        return Err(Error::Contract("pairing fields on different grids".into()));
    }
    Ok(b.inner(phi))
}

/// Per-step terms of the Itô energy identity, evaluated from `B_m` and the
/// noise without reference to the solver's update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyStep {
    pub increment: f64,
    /// `-2 sum <B . grad sigma, B> dW`.
    pub martingale: f64,
    /// `2 dt sum_m ||B . grad sigma_m||^2`, summed over all modes.
    pub drift: f64,
    pub residual: f64,
}

/// Stretching functionals of a field: the martingale coefficients
/// `<B . grad sigma_m, B>` and the drift rate `sum_m ||B . grad sigma_m||^2`.
#[derive(Debug, Clone)]
pub struct StretchingFunctionals {
    /// `<B . grad sigma_m, B>` for each noise mode `m`.
    pub coefficients: Vec<Complex64>,
    pub drift_rate: f64,
}

/// Evaluates the stretching functionals through the Fourier transform of
/// `B_i B_l` and the symmetric matrix `S_il = sum_p Re(B_i(p) conj B_l(p))`.
pub fn stretching_functionals(b: &SpectralVectorField, basis: &NoiseBasis) -> Result<StretchingFunctionals> {
    let g = b.grid();
    if g.dim() != 3 || basis.dim() != 3 {
        return Err(Error::InvalidInput("stretching functionals need 3D fields".into()));
    }
    let band = basis.max_wavenumber().floor() as usize;
    if g.size() < 2 * g.k_max() as usize + band + 1 {
        return Err(Error::Resolution("grid aliases B_i B_l onto the noise shell".into()));
    }
    let comps: Vec<Vec<Complex64>> = (0..3).map(|c| b.component(c).to_vec()).collect();
    let phys = g.synthesize_many(&comps);
    let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
    let prods: Vec<Vec<f64>> =
        pairs.iter().map(|&(i, l)| phys[i].iter().zip(&phys[l]).map(|(x, y)| x * y).collect()).collect();
    let mut t_hat: Vec<Vec<Complex64>> = Vec::with_capacity(6);
    for w in prods.chunks(2) {
        let (a, c) = g.analyze_pair(&w[0], &w[1]);
        t_hat.push(a);
        t_hat.push(c);
    }
    let slot = |i: usize, l: usize| pairs.iter().position(|&p| p == (i.min(l), i.max(l))).expect("pair listed");
    let vol = g.volume();
    let mut coefficients = Vec::with_capacity(basis.len());
    for m in basis.modes() {
        let k = m.k();
        let neg = [-m.index.k[0], -m.index.k[1], -m.index.k[2]];
        let idx = g.index_of(neg).ok_or_else(|| Error::Resolution("noise mode off grid".into()))?;
        let mut s = Complex64::new(0.0, 0.0);
        for i in 0..3 {
            for l in 0..3 {
                s += k[i] * m.a[l] * t_hat[slot(i, l)][idx];
            }
        }
        coefficients.push(Complex64::new(0.0, m.theta * vol) * s);
    }

    let mut smat = Matrix3::zeros();
    for i in 0..3 {
        for l in 0..3 {
            smat[(i, l)] = b.component(i).iter().zip(b.component(l)).map(|(x, y)| (x * y.conj()).re).sum::<f64>();
        }
    }
    let drift_rate = basis
        .modes()
        .iter()
        .map(|m| {
            let k = m.k();
            let kv = nalgebra::Vector3::new(k[0], k[1], k[2]);
            m.theta * m.theta * (kv.transpose() * smat * kv)[0]
        })
        .sum::<f64>()
        * vol;
    Ok(StretchingFunctionals { coefficients, drift_rate })
}

/// Itô energy residuals `r_m = (||B_{m+1}||^2 - ||B_m||^2) - M_m - D_m`
/// along a recorded trajectory.
pub fn energy_step(
    basis: &NoiseBasis,
    before: &SpectralVectorField,
    noise: &NoiseRealization,
    after: &SpectralVectorField,
) -> Result<EnergyStep> {
    if noise.increments.len() != basis.len() {
        return Err(Error::LengthMismatch { expected: basis.len(), got: noise.increments.len() });
    }
    let f = stretching_functionals(before, basis)?;
    let martingale: f64 = -2.0 * f.coefficients.iter().zip(&noise.increments).map(|(c, w)| (c * w).re).sum::<f64>();
    let drift = 2.0 * f.drift_rate * noise.dt;
    let increment = after.norm_sq() - before.norm_sq();
    Ok(EnergyStep { increment, martingale, drift, residual: increment - martingale - drift })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyResidual {
    pub steps: Vec<EnergyStep>,
    /// Running mean of the residuals.
    pub running_mean: Vec<f64>,
}

impl EnergyResidual {
    pub fn total(&self) -> f64 {
        self.steps.iter().map(|s| s.residual).sum()
    }
}

pub fn ito_energy_residual(
    basis: &NoiseBasis,
    trajectory: &[SpectralVectorField],
    noises: &[NoiseRealization],
) -> Result<EnergyResidual> {
    if trajectory.len() != noises.len() + 1 {
        return Err(Error::LengthMismatch { expected: noises.len() + 1, got: trajectory.len() });
    }
    let mut steps = Vec::with_capacity(noises.len());
    let mut running_mean = Vec::with_capacity(noises.len());
    let mut sum = 0.0;
    for (m, noise) in noises.iter().enumerate() {
        let s = energy_step(basis, &trajectory[m], noise, &trajectory[m + 1])?;
        sum += s.residual;
        running_mean.push(sum / (m + 1) as f64);
        steps.push(s);
    }
    Ok(EnergyResidual { steps, running_mean })
}

/// Ensemble statistics of the accumulated residual `sum_m r_m` per path.
pub fn residual_estimate(totals: &[f64]) -> Result<Estimate> {
    Estimate::from_samples(totals)
}

/// `E[sup_t ||B_t||^gamma]` from per-path energy series.
pub fn sup_moment(energy_paths: &[Vec<f64>], gamma: f64) -> Result<Estimate> {
    let samples: Vec<f64> =
        energy_paths.iter().map(|e| e.iter().copied().fold(0.0, f64::max).powf(gamma / 2.0)).collect();
    Estimate::from_samples(&samples)
}

/// `C^2` test function on `T^3 x R^3`.
pub trait PhaseTestFunction {
    fn value(&self, x: [f64; 3], b: [f64; 3]) -> f64;
    fn grad_x(&self, x: [f64; 3], b: [f64; 3]) -> [f64; 3];
    fn grad_b(&self, x: [f64; 3], b: [f64; 3]) -> [f64; 3];
    fn lap_x(&self, x: [f64; 3], b: [f64; 3]) -> f64;
    fn hess_b(&self, x: [f64; 3], b: [f64; 3]) -> Matrix3<f64>;
}

/// One step of the pathwise Vlasov identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VlasovStep {
    /// `-sum int sigma . grad_x f dW`.
    pub transport: f64,
    /// `-sum int (B . grad sigma) . grad_b f dW`.
    pub stretching: f64,
    /// `(2/3) chi eta_n dt int Lap_x f`.
    pub diffusion_x: f64,
    /// `chi dt int L^n(B) : Hess_b f`.
    pub diffusion_b: f64,
}

impl VlasovStep {
    pub fn total(&self) -> f64 {
        self.transport + self.stretching + self.diffusion_x + self.diffusion_b
    }
}

/// Evaluates the pathwise Vlasov terms by grid quadrature.
#[derive(Debug, Clone)]
pub struct VlasovIdentity {
    solver: VectorSolver,
    ln: LnTensor,
}

impl VlasovIdentity {
    pub fn new(solver: &VectorSolver) -> Result<Self> {
        Ok(Self { solver: solver.clone(), ln: LnTensor::new(solver.cfg.n)? })
    }

    fn physical(&self, b: &SpectralVectorField) -> Vec<[f64; 3]> {
        let g = &self.solver.grid;
        let comps: Vec<Vec<Complex64>> = (0..3).map(|c| b.component(c).to_vec()).collect();
        let phys = g.synthesize_many(&comps);
        (0..g.len()).map(|i| [phys[0][i], phys[1][i], phys[2][i]]).collect()
    }

    fn cell(&self) -> f64 {
        self.solver.grid.volume() / self.solver.grid.len() as f64
    }

    /// `int f(x, B(x)) dx`.
    pub fn integral(&self, b: &SpectralVectorField, f: &dyn PhaseTestFunction) -> f64 {
        let g = &self.solver.grid;
        let phys = self.physical(b);
        (0..g.len()).map(|i| f.value(g.point(i), phys[i])).sum::<f64>() * self.cell()
    }

    pub fn step_terms(
        &self,
        b: &SpectralVectorField,
        noise: &NoiseRealization,
        f: &dyn PhaseTestFunction,
    ) -> Result<VlasovStep> {
        let s = &self.solver;
        let g = &s.grid;
        let u = s.velocity(noise)?;
        // grad u: component (i, l) = d_i u_l.
        let mut spec = vec![vec![Complex64::new(0.0, 0.0); g.len()]; 9];
        for ((m, &slot), w) in s.basis.modes().iter().zip(&s.slots).zip(&noise.increments) {
            let k = m.k();
            for i in 0..3 {
                for l in 0..3 {
                    spec[3 * i + l][slot] += Complex64::new(0.0, k[i]) * m.theta * m.a[l] * w;
                }
            }
        }
        let du = g.synthesize_many(&spec);
        let phys = self.physical(b);
        let dt = s.cfg.dt;
        let mut out = VlasovStep { transport: 0.0, stretching: 0.0, diffusion_x: 0.0, diffusion_b: 0.0 };
        for (p, bp) in phys.iter().enumerate() {
            let x = g.point(p);
            let bp = *bp;
            let gx = f.grad_x(x, bp);
            let gb = f.grad_b(x, bp);
            out.transport -= (0..3).map(|c| u[c][p] * gx[c]).sum::<f64>();
            for l in 0..3 {
                let stretch: f64 = (0..3).map(|i| bp[i] * du[3 * i + l][p]).sum();
                out.stretching -= stretch * gb[l];
            }
            out.diffusion_x += f.lap_x(x, bp);
            out.diffusion_b += self.ln.matrix(bp).component_mul(&f.hess_b(x, bp)).sum();
        }
        let cell = self.cell();
        out.transport *= cell;
        out.stretching *= cell;
        out.diffusion_x *= cell * s.diffusivity * dt;
        out.diffusion_b *= cell * s.cfg.chi * dt;
        Ok(out)
    }
}

/// Gap `int f(x,B_t) - int f(x,B_0) - sum of accumulated terms` after each
/// step of a recorded trajectory.
pub fn vlasov_residual(
    solver: &VectorSolver,
    trajectory: &[SpectralVectorField],
    noises: &[NoiseRealization],
    f: &dyn PhaseTestFunction,
) -> Result<Vec<f64>> {
    if trajectory.len() != noises.len() + 1 {
        return Err(Error::LengthMismatch { expected: noises.len() + 1, got: trajectory.len() });
    }
    let id = VlasovIdentity::new(solver)?;
    let start = id.integral(&trajectory[0], f);
    let mut acc = 0.0;
    let mut gaps = Vec::with_capacity(noises.len());
    for (m, noise) in noises.iter().enumerate() {
        acc += id.step_terms(&trajectory[m], noise, f)?.total();
        gaps.push(id.integral(&trajectory[m + 1], f) - start - acc);
    }
    Ok(gaps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn cfg(n: u32, k_max: u32) -> VectorRunConfig {
        let dt = VectorRunConfig::max_stable_dt(n, 1.0, k_max).unwrap();
        VectorRunConfig { n, chi: 1.0, k_max, dt, t_end: 10.0 * dt, seed: 5, gamma: 4.0 }
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn low_mode_field(grid: &Arc<SpectralGrid>) -> SpectralVectorField {
        let f = SpectralVectorField::from_modes(
            grid,
            &[
                ([1, 0, 0], [c(0.0, 0.0), c(0.7, 0.2), c(-0.1, 0.4)]),
                ([0, 1, 1], [c(0.3, -0.2), c(0.5, 0.0), c(-0.5, 0.0)]),
            ],
        )
        .unwrap();
        crate::spectral::leray_project(&f)
    }

    #[test]
    fn config_validation() {
        let good = cfg(2, 8);
        assert!(good.validate().is_ok());
        assert!(matches!(VectorRunConfig { dt: 10.0 * good.dt, ..good }.validate(), Err(Error::Stability(_))));
        assert!(matches!(VectorRunConfig { gamma: 2.0, ..good }.validate(), Err(Error::Config(_))));
        assert!(matches!(VectorRunConfig { k_max: 3, ..good }.validate(), Err(Error::Config(_))));
        let parsed: VectorRunConfig =
            serde_json::from_str(r#"{"n":2,"k_max":8,"dt":1e-5,"t_end":1e-4,"seed":1}"#).unwrap();
        assert_eq!(parsed.chi, 1.0);
        assert_eq!(parsed.gamma, 4.0);
    }

    #[test]
    fn zero_field_stays_zero() {
        let s = VectorSolver::new(cfg(1, 4)).unwrap();
        let z = SpectralVectorField::zeros(s.grid());
        let noise = sample_increments(s.basis(), s.config().dt, StreamKey::new(1, 0, 0)).unwrap();
        let (next, d) = s.step_detailed(&z, &noise).unwrap();
        assert_eq!(next.norm_sq(), 0.0);
        assert_eq!(d.martingale, 0.0);
        assert_eq!(d.drift, 0.0);
        let e = energy_step(s.basis(), &z, &noise, &next).unwrap();
        assert_eq!(e.residual, 0.0);
    }

    #[test]
    fn step_matches_dense_mode_coupling() {
        let s = VectorSolver::new(cfg(1, 4)).unwrap();
        let g = s.grid().clone();
        let b = low_mode_field(&g);
        let noise = sample_increments(s.basis(), s.config().dt, StreamKey::new(9, 1, 0)).unwrap();
        let next = s.step(&b, &noise).unwrap();

        // Independent convolution over (B mode, noise mode) pairs.
        let mut out: HashMap<[i32; 3], [Complex64; 3]> = HashMap::new();
        let mut support = Vec::new();
        for i in 0..g.len() {
            let v = [b.component(0)[i], b.component(1)[i], b.component(2)[i]];
            if v.iter().any(|z| z.norm() > 0.0) {
                support.push((g.wave_vector(i), v));
            }
        }
        assert!(support.len() <= 100);
        let kc = s.diffusivity() * s.config().dt;
        for &(p, v) in &support {
            let p2 = norm2(p) as f64;
            let e = out.entry(p).or_insert([c(0.0, 0.0); 3]);
            for comp in 0..3 {
                e[comp] += v[comp] * (1.0 - kc * p2);
            }
            for (m, w) in s.basis().modes().iter().zip(&noise.increments) {
                let k = m.index.k;
                let q = [p[0] + k[0], p[1] + k[1], p[2] + k[2]];
                if norm2(q) > (s.config().k_max as i64).pow(2) || norm2(q) == 0 {
                    continue;
                }
                let pf = [p[0] as f64, p[1] as f64, p[2] as f64];
                let a_dot_p: f64 = (0..3).map(|j| m.a[j] * pf[j]).sum();
                let b_dot_k: Complex64 = (0..3).map(|j| v[j] * k[j] as f64).sum();
                let e = out.entry(q).or_insert([c(0.0, 0.0); 3]);
                for comp in 0..3 {
                    e[comp] += c(0.0, 1.0) * m.theta * w * (a_dot_p * v[comp] - b_dot_k * m.a[comp]);
                }
            }
        }
        let mut max_err: f64 = 0.0;
        for i in 0..g.len() {
            let k = g.wave_vector(i);
            let mut want = out.get(&k).copied().unwrap_or([c(0.0, 0.0); 3]);
            let kf = [k[0] as f64, k[1] as f64, k[2] as f64];
            let k2 = norm2(k) as f64;
            if k2 > 0.0 {
                let dot: Complex64 = (0..3).map(|j| want[j] * kf[j]).sum();
                for j in 0..3 {
                    want[j] -= dot * kf[j] / k2;
                }
            }
            for j in 0..3 {
                max_err = max_err.max((next.component(j)[i] - want[j]).norm());
            }
        }
        assert!(max_err < 1e-13, "max error {max_err}");
        assert!(next.max_divergence() < 1e-12);
        assert!(next.reality_defect() < 1e-14);
    }

    #[test]
    fn truncation_loss_matches_wider_galerkin_set() {
        let narrow = VectorSolver::new(cfg(1, 3)).unwrap();
        let wide = VectorSolver::new(VectorRunConfig { k_max: 5, ..cfg(1, 3) }).unwrap();
        let modes = [
            ([1, 2, 2], [c(0.0, 0.0), c(0.7, 0.2), c(-0.7, -0.2)]),
            ([0, 1, 0], [c(0.3, 0.0), c(0.0, 0.0), c(0.2, 0.1)]),
        ];
        let bn = SpectralVectorField::from_modes(narrow.grid(), &modes).unwrap();
        let bw = SpectralVectorField::from_modes(wide.grid(), &modes).unwrap();
        let key = StreamKey::new(6, 0, 0);
        let noise = sample_increments(narrow.basis(), narrow.config().dt, key).unwrap();
        let (gn, loss) = narrow.noise_term_with_loss(&bn, &narrow.velocity(&noise).unwrap());
        let (gw, wide_loss) = wide.noise_term_with_loss(&bw, &wide.velocity(&noise).unwrap());
        assert!(loss > 0.0);
        assert!(wide_loss < 1e-12 * gw.norm_sq());
        assert!((gw.norm_sq() - gn.norm_sq() - loss).abs() < 1e-12 * gw.norm_sq());
    }

    #[test]
    fn martingale_and_drift_routes_agree() {
        let s = VectorSolver::new(cfg(2, 10)).unwrap();
        let b = low_mode_field(s.grid());
        for step in 0..5 {
            let noise = sample_increments(s.basis(), s.config().dt, StreamKey::new(2, 0, step)).unwrap();
            let (next, d) = s.step_detailed(&b, &noise).unwrap();
            let e = energy_step(s.basis(), &b, &noise, &next).unwrap();
            assert!((d.martingale - e.martingale).abs() < 1e-12 * b.norm_sq(), "{} {}", d.martingale, e.martingale);
            assert!((d.drift - e.drift).abs() < 1e-12 * d.drift);
            assert!(e.drift > 0.0);
        }
    }

    #[test]
    fn martingale_variance_matches_quadratic_variation() {
        let s = VectorSolver::new(cfg(1, 6)).unwrap();
        let b = low_mode_field(s.grid());
        let f = stretching_functionals(&b, s.basis()).unwrap();
        let dt = s.config().dt;
        // Each conjugate pair contributes -4 Re(c dW), of variance 16 dt |c|^2.
        let expect: f64 = s.basis().positive().iter().map(|&i| 16.0 * dt * f.coefficients[i].norm_sqr()).sum();
        let mut acc = crate::stats::Accumulator::default();
        for step in 0..20000 {
            let noise = sample_increments(s.basis(), dt, StreamKey::new(4, 0, step)).unwrap();
            let m: f64 = -2.0 * f.coefficients.iter().zip(&noise.increments).map(|(c, w)| (c * w).re).sum::<f64>();
            acc.push(m * m);
        }
        let est = acc.estimate().unwrap();
        assert!(est.covers(expect, 4.0), "{} +- {} vs {expect}", est.mean, est.stderr);
    }

    #[test]
    fn drift_strictly_positive_on_nonzero_fields() {
        let s = VectorSolver::new(cfg(1, 6)).unwrap();
        let b = low_mode_field(s.grid());
        let f = stretching_functionals(&b, s.basis()).unwrap();
        let alpha = shell_sums(1, 3).unwrap().alpha_n;
        assert!(f.drift_rate > 0.0);
        assert!((f.drift_rate - 2.0 * alpha / 3.0 * b.norm_sq()).abs() < 1e-12 * f.drift_rate);
    }

    #[test]
    fn residual_length_mismatch() {
        let s = VectorSolver::new(cfg(1, 4)).unwrap();
        let z = SpectralVectorField::zeros(s.grid());
        assert!(matches!(ito_energy_residual(s.basis(), &[z.clone(), z], &[]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn pairing_at_zero_and_orthogonality() {
        let s = VectorSolver::new(cfg(1, 4)).unwrap();
        let b = low_mode_field(s.grid());
        assert_eq!(mean_field_pairing(&b, &b).unwrap(), b.norm_sq());
        let phi =
            SpectralVectorField::from_modes(s.grid(), &[([0, 0, 4], [c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)])]).unwrap();
        assert_eq!(mean_field_pairing(&b, &phi).unwrap(), 0.0);
    }

    struct Linear;

    impl PhaseTestFunction for Linear {
        fn value(&self, x: [f64; 3], b: [f64; 3]) -> f64 {
            (x[0].cos() + 0.5 * x[2].sin()) * b[1]
        }
        fn grad_x(&self, x: [f64; 3], b: [f64; 3]) -> [f64; 3] {
            [-x[0].sin() * b[1], 0.0, 0.5 * x[2].cos() * b[1]]
        }
        fn grad_b(&self, x: [f64; 3], _: [f64; 3]) -> [f64; 3] {
            [0.0, x[0].cos() + 0.5 * x[2].sin(), 0.0]
        }
        fn lap_x(&self, x: [f64; 3], b: [f64; 3]) -> f64 {
            -(x[0].cos() + 0.5 * x[2].sin()) * b[1]
        }
        fn hess_b(&self, _: [f64; 3], _: [f64; 3]) -> Matrix3<f64> {
            Matrix3::zeros()
        }
    }

    /// `(1 + cos(x_1)/2) |b|^2`.
    struct Weighted;

    impl PhaseTestFunction for Weighted {
        fn value(&self, x: [f64; 3], b: [f64; 3]) -> f64 {
            (1.0 + 0.5 * x[0].cos()) * (b[0] * b[0] + b[1] * b[1] + b[2] * b[2])
        }
        fn grad_x(&self, x: [f64; 3], b: [f64; 3]) -> [f64; 3] {
            [-0.5 * x[0].sin() * (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]), 0.0, 0.0]
        }
        fn grad_b(&self, x: [f64; 3], b: [f64; 3]) -> [f64; 3] {
            let w = 2.0 * (1.0 + 0.5 * x[0].cos());
            [w * b[0], w * b[1], w * b[2]]
        }
        fn lap_x(&self, x: [f64; 3], b: [f64; 3]) -> f64 {
            -0.5 * x[0].cos() * (b[0] * b[0] + b[1] * b[1] + b[2] * b[2])
        }
        fn hess_b(&self, x: [f64; 3], _: [f64; 3]) -> Matrix3<f64> {
            2.0 * (1.0 + 0.5 * x[0].cos()) * Matrix3::identity()
        }
    }

    fn record(s: &VectorSolver, b0: &SpectralVectorField, noises: &[NoiseRealization]) -> Vec<SpectralVectorField> {
        let mut traj = vec![b0.clone()];
        for n in noises {
            let next = s.step(traj.last().unwrap(), n).unwrap();
            traj.push(next);
        }
        traj
    }

    #[test]
    fn vlasov_gap_vanishes_for_linear_test_functions() {
        let s = VectorSolver::new(cfg(1, 6)).unwrap();
        let b0 = low_mode_field(s.grid());
        let noises: Vec<_> =
            (0..5).map(|m| sample_increments(s.basis(), s.config().dt, StreamKey::new(8, 0, m)).unwrap()).collect();
        let traj = record(&s, &b0, &noises);
        let gaps = vlasov_residual(&s, &traj, &noises, &Linear).unwrap();
        let scale = b0.norm_sq().sqrt();
        assert!(gaps.iter().all(|g| g.abs() < 1e-12 * scale), "{gaps:?}");
    }

    #[test]
    fn vlasov_square_drift_is_twice_trace_ln() {
        let s = VectorSolver::new(cfg(1, 6)).unwrap();
        let b0 = low_mode_field(s.grid());
        let id = VlasovIdentity::new(&s).unwrap();
        let noise = NoiseRealization::zero(s.basis(), s.config().dt, StreamKey::new(0, 0, 0));
        let terms = id.step_terms(&b0, &noise, &Weighted).unwrap();
        let ln = LnTensor::new(1).unwrap();
        let g = s.grid();
        let phys = b0.to_physical();
        let cell = g.volume() / g.len() as f64;
        let want: f64 =
            (0..g.len()).map(|i| 2.0 * (1.0 + 0.5 * g.point(i)[0].cos()) * ln.matrix(phys[i]).trace()).sum::<f64>()
                * cell
                * s.config().dt;
        assert!((terms.diffusion_b - want).abs() < 1e-12 * want);
        assert_eq!(terms.transport, 0.0);
        assert_eq!(terms.stretching, 0.0);
    }

    #[test]
    fn vlasov_gap_shrinks_under_dt_refinement() {
        let base = cfg(1, 6);
        let fine_cfg = VectorRunConfig { dt: base.dt / 4.0, t_end: 40.0 * base.dt, ..base };
        let coarse_cfg = VectorRunConfig { t_end: 40.0 * base.dt, ..base };
        let fine = VectorSolver::new(fine_cfg).unwrap();
        let coarse = VectorSolver::new(coarse_cfg).unwrap();
        let b0 = low_mode_field(fine.grid());
        let (mut gc, mut gf) = (0.0, 0.0);
        for path in 0..4 {
            let fine_noise: Vec<_> = (0..160)
                .map(|m| sample_increments(fine.basis(), fine_cfg.dt, StreamKey::new(11, path, m)).unwrap())
                .collect();
            let coarse_noise: Vec<_> = fine_noise
                .chunks(4)
                .map(|w| NoiseRealization {
                    dt: coarse_cfg.dt,
                    key: w[0].key,
                    increments: (0..w[0].increments.len()).map(|i| w.iter().map(|n| n.increments[i]).sum()).collect(),
                })
                .collect();
            let tf = record(&fine, &b0, &fine_noise);
            let tc = record(&coarse, &b0, &coarse_noise);
            gf += vlasov_residual(&fine, &tf, &fine_noise, &Weighted).unwrap().last().unwrap().abs();
            gc += vlasov_residual(&coarse, &tc, &coarse_noise, &Weighted).unwrap().last().unwrap().abs();
        }
        assert!(gf < 0.75 * gc, "coarse {gc} fine {gf}");
    }
}
