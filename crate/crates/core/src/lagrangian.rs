//! Particle simulations: the limit SDE `db = kappa A(b) dW` and the
//! finite-shell Lagrangian system
//! `dX + sum sigma(X) o dW = 0`, `db + sum (b . grad) sigma(X) o dW = 0`.

use std::f64::consts::{PI, SQRT_2};
use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{sample_increments, NoiseBasis, NoiseRealization};
use crate::par::map_indexed;
use crate::rng::StreamKey;
use crate::scalar::step_count;
use crate::spectral::SpectralVectorField;
use crate::stats::{Accumulator, Estimate};
use crate::vlasov::{c_l, BGridDensity};
use crate::young::{torus_distance, ValueBins, ValueSamples, MIN_BALL_POINTS};

/// Diffusion factor that makes the SDE generator `L : Hess_b`.
pub const KAPPA_CALIBRATED: f64 = SQRT_2;

const MIDPOINT_TOL: f64 = 1e-14;
const MIDPOINT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdeScheme {
    #[default]
    EulerMaruyama,
    MilsteinDiagonal,
}

fn one() -> f64 {
    1.0
}

fn default_kappa() -> f64 {
    KAPPA_CALIBRATED
}

fn default_floor() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeConfig {
    #[serde(default)]
    pub scheme: SdeScheme,
    pub dt: f64,
    pub t_end: f64,
    pub paths: usize,
    pub seed: u64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "one")]
    pub chi: f64,
    /// Radius guard relative to `|b0|`.
    #[serde(default = "default_floor")]
    pub floor_eps: f64,
    /// Weight on the `P_b` part of `A(b)`.
    #[serde(default = "one")]
    pub parallel_weight: f64,
    /// Weight on the `I - P_b` part of `A(b)`.
    #[serde(default = "one")]
    pub transverse_weight: f64,
    /// Record `|b|^2` statistics every this many steps (0: final time only).
    #[serde(default)]
    pub record_every: usize,
}

impl SdeConfig {
    pub fn new(dt: f64, t_end: f64, paths: usize, seed: u64) -> Self {
        Self {
            scheme: SdeScheme::default(),
            dt,
            t_end,
            paths,
            seed,
            kappa: KAPPA_CALIBRATED,
            chi: 1.0,
            floor_eps: default_floor(),
            parallel_weight: 1.0,
            transverse_weight: 1.0,
            record_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.t_end >= 0.0) {
            return Err(Error::Config("dt must be positive and t_end nonnegative".into()));
        }
        if self.paths == 0 {
            return Err(Error::Config("paths must be >= 1".into()));
        }
        if !(self.kappa > 0.0) || !(self.chi > 0.0) || !(self.floor_eps >= 0.0) {
            return Err(Error::Config("kappa and chi must be positive, floor_eps nonnegative".into()));
        }
        if !(self.parallel_weight >= 0.0) || !(self.transverse_weight >= 0.0) {
            return Err(Error::Config("diffusion weights must be nonnegative".into()));
        }
        step_count(self.t_end, self.dt)?;
        Ok(())
    }

    pub fn steps(&self) -> usize {
        step_count(self.t_end, self.dt).unwrap_or(0)
    }
}

/// Law of the initial value `b0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialLaw {
    Point {
        b: [f64; 3],
    },
    /// Isotropic Gaussian with per-coordinate standard deviation `sigma`.
    Gaussian {
        mean: [f64; 3],
        sigma: f64,
    },
}

impl InitialLaw {
    fn sample(&self, rng: &mut impl Rng) -> [f64; 3] {
        match *self {
            InitialLaw::Point { b } => b,
            InitialLaw::Gaussian { mean, sigma } => {
                let mut b = mean;
                for c in &mut b {
                    let z: f64 = rng.sample(StandardNormal);
                    *c += sigma * z;
                }
                b
            }
        }
    }
}

/// `|b|^2` statistics at one recorded time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryRow {
    pub t: f64,
    pub mean_sq: f64,
    pub var_sq: f64,
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], mut w: W) -> Result<()> {
    writeln!(w, "# schema=1")?;
    writeln!(w, "t,mean_sq,var_sq")?;
    for r in rows {
        writeln!(w, "{:e},{:e},{:e}", r.t, r.mean_sq, r.var_sq)?;
    }
    Ok(())
}

/// Particle states at a common time.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub t: f64,
    pub initial: Vec<[f64; 3]>,
    /// Positions on the torus; absent for the limit SDE.
    pub x: Option<Vec<[f64; 3]>>,
    pub b: Vec<[f64; 3]>,
    /// Path-steps taken inside the origin guard.
    pub floor_hits: usize,
    /// Smallest `|b|` seen along all paths.
    pub min_radius: f64,
    pub summary: Vec<SummaryRow>,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    /// Per-path `|b_T|^2 / |b_0|^2`, whose mean is `exp(rate T)` in the limit.
    pub fn growth_ratio(&self) -> Result<Estimate> {
        let ratios: Vec<f64> = self
            .initial
            .iter()
            .zip(&self.b)
            .map(|(b0, b)| {
                let r0 = norm_sq(*b0);
                if r0 > 0.0 {
                    Ok(norm_sq(*b) / r0)
                } else {
                    Err(Error::InvalidInput("growth ratio undefined for b0 = 0".into()))
                }
            })
            .collect::<Result<_>>()?;
        Estimate::from_samples(&ratios)
    }

    pub fn mean_log_radius(&self) -> Result<Estimate> {
        let logs: Vec<f64> = self.b.iter().map(|b| 0.5 * norm_sq(*b).ln()).collect();
        Estimate::from_samples(&logs)
    }
}

fn norm_sq(b: [f64; 3]) -> f64 {
    b[0] * b[0] + b[1] * b[1] + b[2] * b[2]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// `kappa A(b) = |b| (t (I - P_b) + p P_b)` with the weights folded in.
#[derive(Debug, Clone, Copy)]
struct Diffusion {
    par: f64,
    trans: f64,
}

impl Diffusion {
    fn new(cfg: &SdeConfig) -> Self {
        let c = c_l(cfg.chi);
        Self {
            par: cfg.kappa * cfg.parallel_weight * c.sqrt(),
            trans: cfg.kappa * cfg.transverse_weight * (2.0 * c).sqrt(),
        }
    }

    fn apply(&self, b: [f64; 3], dw: [f64; 3]) -> [f64; 3] {
        let r = norm_sq(b).sqrt();
        if r == 0.0 {
            return [0.0; 3];
        }
        let bh = [b[0] / r, b[1] / r, b[2] / r];
        let s = dot(bh, dw);
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = r * (self.trans * (dw[i] - s * bh[i]) + self.par * s * bh[i]);
        }
        out
    }

    fn matrix(&self, b: [f64; 3]) -> Matrix3<f64> {
        let r = norm_sq(b).sqrt();
        if r == 0.0 {
            return Matrix3::zeros();
        }
        let v = Vector3::new(b[0], b[1], b[2]) / r;
        r * (self.trans * Matrix3::identity() + (self.par - self.trans) * v * v.transpose())
    }

    /// `1/2 sum_j (sigma_j . grad) sigma_ij (dW_j^2 - dt)`.
    fn milstein(&self, b: [f64; 3], dw: [f64; 3], dt: f64) -> [f64; 3] {
        let r = norm_sq(b).sqrt();
        if r == 0.0 {
            return [0.0; 3];
        }
        let bh = [b[0] / r, b[1] / r, b[2] / r];
        let sigma = self.matrix(b);
        let q = self.par - self.trans;
        let delta = |a: usize, c: usize| if a == c { 1.0 } else { 0.0 };
        let d_sigma = |l: usize, i: usize, j: usize| {
            self.trans * bh[l] * delta(i, j) + q * (delta(i, l) * bh[j] + bh[i] * delta(j, l) - bh[i] * bh[j] * bh[l])
        };
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            for j in 0..3 {
                let g: f64 = (0..3).map(|l| sigma[(l, j)] * d_sigma(l, i, j)).sum();
                *o += 0.5 * g * (dw[j] * dw[j] - dt);
            }
        }
        out
    }
}

struct PathResult {
    b0: [f64; 3],
    b: [f64; 3],
    floor_hits: usize,
    min_radius: f64,
    records: Vec<f64>,
}

fn simulate_path(init: &InitialLaw, cfg: &SdeConfig, diff: Diffusion, path: usize) -> PathResult {
    let mut rng = StreamKey::new(cfg.seed, path as u64, 0).rng();
    let b0 = init.sample(&mut rng);
    let floor = cfg.floor_eps * norm_sq(b0).sqrt();
    let sdt = cfg.dt.sqrt();
    let mut b = b0;
    let mut floor_hits = 0;
    let mut min_radius = norm_sq(b0).sqrt();
    let mut records = Vec::new();
    for step in 0..cfg.steps() {
        let dw: [f64; 3] = std::array::from_fn(|_| sdt * rng.sample::<f64, _>(StandardNormal));
        let r = norm_sq(b).sqrt();
        let inc = diff.apply(b, dw);
        let corr = if r <= floor {
            floor_hits += 1;
            [0.0; 3]
        } else {
            match cfg.scheme {
                SdeScheme::EulerMaruyama => [0.0; 3],
                SdeScheme::MilsteinDiagonal => diff.milstein(b, dw, cfg.dt),
            }
        };
        for i in 0..3 {
            b[i] += inc[i] + corr[i];
        }
        min_radius = min_radius.min(norm_sq(b).sqrt());
        if cfg.record_every > 0 && (step + 1) % cfg.record_every == 0 {
            records.push(norm_sq(b));
        }
    }
    if floor_hits > 0 {
        log::debug!("path {path}: {floor_hits} steps inside the origin guard");
    }
    PathResult { b0, b, floor_hits, min_radius, records }
}

/// Paths of `db = kappa A(b) dW` (Itô), one random stream per path.
pub fn simulate_limit_sde(init: &InitialLaw, cfg: &SdeConfig) -> Result<ParticleEnsemble> {
    cfg.validate()?;
    let diff = Diffusion::new(cfg);
    let results = map_indexed(cfg.paths, |p| simulate_path(init, cfg, diff, p));
    let mut summary = Vec::new();
    if cfg.record_every > 0 {
        for r in 0..results[0].records.len() {
            let mut acc = Accumulator::default();
            results.iter().for_each(|p| acc.push(p.records[r]));
            let t = ((r + 1) * cfg.record_every) as f64 * cfg.dt;
            summary.push(SummaryRow { t, mean_sq: acc.mean(), var_sq: acc.variance() });
        }
    }
    let floor_hits: usize = results.iter().map(|p| p.floor_hits).sum();
    if floor_hits > 0 {
        log::info!("{floor_hits} path-steps used the frozen diffusion near b = 0");
    }
    Ok(ParticleEnsemble {
        t: cfg.steps() as f64 * cfg.dt,
        initial: results.iter().map(|p| p.b0).collect(),
        x: None,
        b: results.iter().map(|p| p.b).collect(),
        floor_hits,
        min_radius: results.iter().map(|p| p.min_radius).fold(f64::INFINITY, f64::min),
        summary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteNConfig {
    pub n: u32,
    #[serde(default = "one")]
    pub chi: f64,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
}

impl FiniteNConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || !(self.chi > 0.0) || !(self.dt > 0.0) || !(self.t_end >= 0.0) {
            return Err(Error::Config("need n >= 1, chi > 0, dt > 0, t_end >= 0".into()));
        }
        step_count(self.t_end, self.dt)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct PairMode {
    k: [i32; 3],
    a: [f64; 3],
    theta: f64,
    slot: usize,
}

/// Stratonovich midpoint integrator for particles in one noise environment.
#[derive(Debug, Clone)]
pub struct LagrangianSystem {
    cfg: FiniteNConfig,
    basis: NoiseBasis,
    modes: Vec<PairMode>,
    k_reach: usize,
}

impl LagrangianSystem {
    pub fn new(cfg: FiniteNConfig) -> Result<Self> {
        cfg.validate()?;
        let basis = NoiseBasis::vector(cfg.n, cfg.chi)?;
        Self::with_basis(cfg, basis)
    }

    pub fn with_basis(cfg: FiniteNConfig, basis: NoiseBasis) -> Result<Self> {
        cfg.validate()?;
        if basis.dim() != 3 {
            return Err(Error::Config("the Lagrangian system is three-dimensional".into()));
        }
        let modes: Vec<PairMode> = basis
            .positive()
            .iter()
            .map(|&i| {
                let m = &basis.modes()[i];
                PairMode { k: m.index.k, a: m.a, theta: m.theta, slot: i }
            })
            .collect();
        let k_reach = modes.iter().flat_map(|m| m.k.iter().map(|c| c.unsigned_abs() as usize)).max().unwrap_or(0);
        Ok(Self { cfg, basis, modes, k_reach })
    }

    pub fn config(&self) -> &FiniteNConfig {
        &self.cfg
    }

    pub fn basis(&self) -> &NoiseBasis {
        &self.basis
    }

    /// Noise increment `U(x) = sum sigma(x) dW` and its Jacobian
    /// `J[i][l] = d_i U_l`.
    pub fn velocity_at(&self, x: [f64; 3], noise: &NoiseRealization) -> ([f64; 3], Matrix3<f64>) {
        let m = self.k_reach;
        let tables: Vec<Vec<Complex64>> = (0..3)
            .map(|a| {
                let step = Complex64::from_polar(1.0, x[a]);
                let mut t = Vec::with_capacity(m + 1);
                let mut z = Complex64::new(1.0, 0.0);
                for _ in 0..=m {
                    t.push(z);
                    z *= step;
                }
                t
            })
            .collect();
        let phase = |a: usize, c: i32| {
            let z = tables[a][c.unsigned_abs() as usize];
            if c < 0 {
                z.conj()
            } else {
                z
            }
        };
        let mut u = [0.0; 3];
        let mut j = Matrix3::zeros();
        for md in &self.modes {
            let e = phase(0, md.k[0]) * phase(1, md.k[1]) * phase(2, md.k[2]);
            let z = md.theta * e * noise.increments[md.slot];
            let (re, im) = (2.0 * z.re, 2.0 * z.im);
            for l in 0..3 {
                u[l] += re * md.a[l];
                for i in 0..3 {
                    j[(i, l)] -= im * md.k[i] as f64 * md.a[l];
                }
            }
        }
        (u, j)
    }

    /// One midpoint step of `(X, b)` with a given noise increment.
    pub fn step_particle(&self, x: [f64; 3], b: [f64; 3], noise: &NoiseRealization) -> Result<([f64; 3], [f64; 3])> {
        let mut xm = x;
        let mut converged = false;
        let mut change = f64::INFINITY;
        for _ in 0..MIDPOINT_MAX_ITER {
            let (u, _) = self.velocity_at(xm, noise);
            let next = [x[0] - 0.5 * u[0], x[1] - 0.5 * u[1], x[2] - 0.5 * u[2]];
            change = (0..3).map(|a| (next[a] - xm[a]).abs()).fold(0.0, f64::max);
            xm = next;
            if change <= MIDPOINT_TOL * (1.0 + x.iter().fold(0.0f64, |s, v| s.max(v.abs()))) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence { iterations: MIDPOINT_MAX_ITER, residual: change });
        }
        let (u, jac) = self.velocity_at(xm, noise);
        let x1 = std::array::from_fn(|a| (x[a] - u[a]).rem_euclid(2.0 * PI));
        let mt = 0.5 * jac.transpose();
        let b0 = Vector3::new(b[0], b[1], b[2]);
        let rhs = (Matrix3::identity() - mt) * b0;
        let b1 = (Matrix3::identity() + mt)
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Contract("singular midpoint matrix".into()))?;
        Ok((x1, [b1[0], b1[1], b1[2]]))
    }

    /// Runs all particles through the environment `stream`, calling
    /// `observe` at t = 0 and after every step.
    pub fn run(
        &self,
        x0s: &[[f64; 3]],
        b0s: &[[f64; 3]],
        stream: u64,
        mut observe: impl FnMut(&ParticleEnsemble),
    ) -> Result<ParticleEnsemble> {
        if x0s.len() != b0s.len() {
            return Err(Error::LengthMismatch { expected: x0s.len(), got: b0s.len() });
        }
        let min_r = |bs: &[[f64; 3]]| bs.iter().map(|b| norm_sq(*b).sqrt()).fold(f64::INFINITY, f64::min);
        let mut ens = ParticleEnsemble {
            t: 0.0,
            initial: b0s.to_vec(),
            x: Some(x0s.to_vec()),
            b: b0s.to_vec(),
            floor_hits: 0,
            min_radius: min_r(b0s),
            summary: Vec::new(),
        };
        observe(&ens);
        let steps = step_count(self.cfg.t_end, self.cfg.dt)?;
        for step in 0..steps {
            let noise =
                sample_increments(&self.basis, self.cfg.dt, StreamKey::new(self.cfg.seed, stream, step as u64))?;
            let xs = ens.x.as_mut().expect("finite-n ensembles carry positions");
            for (x, b) in xs.iter_mut().zip(ens.b.iter_mut()) {
                let (x1, b1) = self.step_particle(*x, *b, &noise)?;
                *x = x1;
                *b = b1;
            }
            ens.t = (step + 1) as f64 * self.cfg.dt;
            ens.min_radius = ens.min_radius.min(min_r(&ens.b));
            observe(&ens);
        }
        Ok(ens)
    }
}

/// Physical value of a spectral vector field at an arbitrary point.
pub fn field_value_at(field: &SpectralVectorField, x: [f64; 3]) -> [f64; 3] {
    let grid = field.grid();
    let mut out = [0.0; 3];
    for &i in grid.galerkin_indices() {
        let k = grid.wave_vector(i);
        let e = Complex64::from_polar(1.0, k[0] as f64 * x[0] + k[1] as f64 * x[1] + k[2] as f64 * x[2]);
        for (c, o) in out.iter_mut().enumerate() {
            *o += (field.component(c)[i] * e).re;
        }
    }
    out
}

/// Particles started at `x0s` with `b = B0(x0)`, driven by one environment.
pub fn simulate_finite_n(
    x0s: &[[f64; 3]],
    b0_field: &SpectralVectorField,
    cfg: FiniteNConfig,
    stream: u64,
    observe: impl FnMut(&ParticleEnsemble),
) -> Result<ParticleEnsemble> {
    let system = LagrangianSystem::new(cfg)?;
    let b0s: Vec<[f64; 3]> = x0s.iter().map(|&x| field_value_at(b0_field, x)).collect();
    system.run(x0s, &b0s, stream, observe)
}

/// Normalized histogram on `bins` (overflow last) with per-bin standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinnedLaw {
    pub bins: ValueBins,
    pub probs: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl BinnedLaw {
    /// Aggregates cell masses of a density by the bin containing each cell
    /// centre; mass outside the bin box goes to overflow.
    pub fn from_density(rho: &BGridDensity, bins: ValueBins) -> Result<Self> {
        if bins.k != 3 {
            return Err(Error::InvalidInput("densities live in three dimensions".into()));
        }
        let mut probs = vec![0.0; bins.len() + 1];
        let masses = rho.cell_masses();
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("density has no mass".into()));
        }
        for (i, m) in masses.iter().enumerate() {
            probs[bins.locate(&rho.center(i))] += m / total;
        }
        let stderr = vec![0.0; probs.len()];
        Ok(Self { bins, probs, stderr })
    }

    /// `1/2 sum |p - q|` over all bins including overflow.
    pub fn total_variation(&self, other: &Self) -> Result<f64> {
        if self.bins != other.bins {
            return Err(Error::InvalidInput("laws are binned differently".into()));
        }
        Ok(0.5 * self.probs.iter().zip(&other.probs).map(|(p, q)| (p - q).abs()).sum::<f64>())
    }
}

pub fn empirical_law(b: &[[f64; 3]], bins: ValueBins) -> Result<BinnedLaw> {
    if b.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let k = bins.k;
    let mut probs = vec![0.0; bins.len() + 1];
    for v in b {
        probs[bins.locate(&v[..k])] += 1.0;
    }
    let n = b.len() as f64;
    probs.iter_mut().for_each(|p| *p /= n);
    let stderr = probs.iter().map(|p| (p * (1.0 - p) / n).sqrt()).collect();
    Ok(BinnedLaw { bins, probs, stderr })
}

/// Fraction of paths ending within `eps` of a target, with a Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupportProbe {
    pub hits: usize,
    pub paths: usize,
    pub fraction: f64,
    pub lower: f64,
    pub upper: f64,
    pub z: f64,
}

fn wilson(hits: usize, n: usize, z: f64) -> (f64, f64) {
    let n = n as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

pub fn support_probe(b0: [f64; 3], b_star: [f64; 3], eps: f64, cfg: &SdeConfig) -> Result<SupportProbe> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    let ens = simulate_limit_sde(&InitialLaw::Point { b: b0 }, cfg)?;
    let hits =
        ens.b.iter().filter(|b| norm_sq([b[0] - b_star[0], b[1] - b_star[1], b[2] - b_star[2]]) <= eps * eps).count();
    let z = 3.0;
    let (lower, upper) = wilson(hits, ens.len(), z);
    Ok(SupportProbe { hits, paths: ens.len(), fraction: hits as f64 / ens.len() as f64, lower, upper, z })
}

/// Fraction of grid points in the ball `B(x0, r)` where `|field| >= big_r`.
pub fn large_values_fraction(samples: &ValueSamples, x0: [f64; 3], r: f64, big_r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidInput(format!("radius must be positive, got {r}")));
    }
    let (mut inside, mut large) = (0usize, 0usize);
    for i in 0..samples.len() {
        if torus_distance(samples.dim(), samples.point(i), x0) <= r {
            inside += 1;
            let v = samples.value(i);
            if v.iter().map(|c| c * c).sum::<f64>().sqrt() >= big_r {
                large += 1;
            }
        }
    }
    if inside < MIN_BALL_POINTS {
        return Err(Error::Resolution(format!(
            "ball of radius {r} holds {inside} grid points, need {MIN_BALL_POINTS}"
        )));
    }
    Ok(large as f64 / inside as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{NoiseMode, SignClass, WaveIndex};
    use crate::spectral::SpectralGrid;
    use crate::vlasov::{a_matrix, moment_growth_rate};

    const E1: [f64; 3] = [1.0, 0.0, 0.0];

    #[test]
    fn origin_is_absorbing() {
        let cfg = SdeConfig::new(1e-3, 0.01, 20, 1);
        let ens = simulate_limit_sde(&InitialLaw::Point { b: [0.0; 3] }, &cfg).unwrap();
        assert!(ens.b.iter().all(|b| *b == [0.0; 3]));
        let probe = support_probe([0.0; 3], E1, 0.5, &cfg).unwrap();
        assert_eq!(probe.hits, 0);
    }

    #[test]
    fn diffusion_matches_a_matrix() {
        let cfg = SdeConfig { kappa: 1.0, ..SdeConfig::new(1e-3, 0.01, 1, 0) };
        let diff = Diffusion::new(&cfg);
        let b = [0.3, -1.2, 0.7];
        let dw = [0.1, 0.4, -0.2];
        let expected = a_matrix(b, 1.0) * Vector3::new(dw[0], dw[1], dw[2]);
        let got = diff.apply(b, dw);
        for i in 0..3 {
            assert!((got[i] - expected[i]).abs() < 1e-14);
        }
        assert!((diff.matrix(b) - a_matrix(b, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn milstein_term_matches_finite_differences() {
        let cfg = SdeConfig { kappa: 1.3, parallel_weight: 0.7, ..SdeConfig::new(1e-3, 0.01, 1, 0) };
        let diff = Diffusion::new(&cfg);
        let b = [0.4, -0.9, 1.1];
        let dw = [0.05, -0.03, 0.02];
        let dt = 1e-3;
        let h = 1e-6;
        let sigma = diff.matrix(b);
        let mut expected = [0.0; 3];
        for j in 0..3 {
            // (sigma_j . grad) sigma_{., j}
            let col = sigma.column(j);
            let bp = [b[0] + h * col[0], b[1] + h * col[1], b[2] + h * col[2]];
            let bm = [b[0] - h * col[0], b[1] - h * col[1], b[2] - h * col[2]];
            let d = (diff.matrix(bp).column(j) - diff.matrix(bm).column(j)) / (2.0 * h);
            for i in 0..3 {
                expected[i] += 0.5 * d[i] * (dw[j] * dw[j] - dt);
            }
        }
        let got = diff.milstein(b, dw, dt);
        for i in 0..3 {
            assert!((got[i] - expected[i]).abs() < 1e-9, "{got:?} vs {expected:?}");
        }
    }

    #[test]
    fn radius_frozen_without_diffusion() {
        let cfg = SdeConfig { parallel_weight: 0.0, transverse_weight: 0.0, ..SdeConfig::new(1e-3, 0.02, 10, 3) };
        let b0 = [0.6, 0.8, 0.0];
        let ens = simulate_limit_sde(&InitialLaw::Point { b: b0 }, &cfg).unwrap();
        assert!(ens.b.iter().all(|b| *b == b0));
    }

    #[test]
    fn parallel_part_keeps_direction() {
        let cfg = SdeConfig { transverse_weight: 0.0, ..SdeConfig::new(1e-3, 0.02, 10, 3) };
        let b0 = [0.6, 0.8, 0.0];
        let ens = simulate_limit_sde(&InitialLaw::Point { b: b0 }, &cfg).unwrap();
        for b in &ens.b {
            let r = norm_sq(*b).sqrt();
            assert!((dot(*b, b0).abs() / r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn second_moment_grows_at_the_dynamo_rate() {
        let t = 0.05;
        for scheme in [SdeScheme::EulerMaruyama, SdeScheme::MilsteinDiagonal] {
            let cfg = SdeConfig { scheme, ..SdeConfig::new(1e-3, t, 20_000, 11) };
            let ens = simulate_limit_sde(&InitialLaw::Point { b: E1 }, &cfg).unwrap();
            let est = ens.growth_ratio().unwrap();
            let target = (moment_growth_rate(1.0) * t).exp();
            assert!(est.covers(target, 3.0), "{scheme:?}: {est:?} vs {target}");
            assert_eq!(ens.floor_hits, 0);
            assert!(ens.min_radius > 0.0);
        }
    }

    #[test]
    fn weak_error_shrinks_with_dt() {
        // EM reproduces E|b|^2 = (1 + r dt)^N exactly, so the bias is
        // resolvable with moderate path counts.
        let t = 0.05;
        let r = moment_growth_rate(1.0);
        let target = (r * t).exp();
        let bias = |dt: f64| {
            let cfg = SdeConfig::new(dt, t, 40_000, 5);
            let est = simulate_limit_sde(&InitialLaw::Point { b: E1 }, &cfg).unwrap().growth_ratio().unwrap();
            let exact = (1.0 + r * dt).powi((t / dt).round() as i32);
            assert!(est.covers(exact, 3.0), "dt={dt}: {est:?} vs {exact}");
            target - exact
        };
        let coarse = bias(0.025);
        let fine = bias(0.0125);
        assert!(fine > 0.0 && coarse > fine);
        let ratio = coarse / fine;
        assert!((1.6..2.4).contains(&ratio), "{ratio}");
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SdeConfig { record_every: 5, ..SdeConfig::new(1e-3, 0.02, 50, 9) };
        let init = InitialLaw::Gaussian { mean: E1, sigma: 0.2 };
        let a = simulate_limit_sde(&init, &cfg).unwrap();
        let b = simulate_limit_sde(&init, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.summary.len(), 4);
        crate::par::set_max_threads(3);
        let c = simulate_limit_sde(&init, &cfg).unwrap();
        crate::par::set_max_threads(0);
        assert_eq!(a, c);
    }

    #[test]
    fn rotated_start_gives_rotated_law() {
        // Rotation by pi/2 about z maps e1 to e2; compare the law of (b_y, -b_x)
        // from e2 with the law of b from e1 via binned TV.
        let cfg = SdeConfig::new(1e-3, 0.03, 20_000, 21);
        let bins = ValueBins::new(3, -3.0, 3.0, 6).unwrap();
        let a = simulate_limit_sde(&InitialLaw::Point { b: E1 }, &cfg).unwrap();
        let cfg2 = SdeConfig { seed: 22, ..cfg };
        let b = simulate_limit_sde(&InitialLaw::Point { b: [0.0, 1.0, 0.0] }, &cfg2).unwrap();
        let rotated: Vec<[f64; 3]> = b.b.iter().map(|v| [v[1], -v[0], v[2]]).collect();
        let tv = empirical_law(&a.b, bins).unwrap().total_variation(&empirical_law(&rotated, bins).unwrap()).unwrap();
        assert!(tv < 0.03, "{tv}");
    }

    #[test]
    fn empirical_law_of_one_particle_is_one_hot() {
        let bins = ValueBins::new(3, -1.0, 1.0, 4).unwrap();
        let law = empirical_law(&[[0.1, 0.2, -0.3]], bins).unwrap();
        assert_eq!(law.probs.iter().filter(|p| **p == 1.0).count(), 1);
        assert_eq!(law.probs.iter().sum::<f64>(), 1.0);
        assert!(matches!(empirical_law(&[], bins), Err(Error::EmptyEnsemble)));
    }

    #[test]
    fn density_binning_conserves_mass() {
        let rho = BGridDensity::gaussian(2.0, 16, [0.5, 0.0, 0.0], 0.4).unwrap();
        let bins = ValueBins::new(3, -2.0, 2.0, 4).unwrap();
        let law = BinnedLaw::from_density(&rho, bins).unwrap();
        assert!((law.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(law.total_variation(&law).unwrap(), 0.0);
    }

    #[test]
    fn support_probe_near_start_and_far_target() {
        let cfg = SdeConfig::new(1e-3, 0.002, 500, 4);
        let near = support_probe(E1, E1, 0.5, &cfg).unwrap();
        assert!(near.fraction > 0.99);
        let cfg = SdeConfig::new(1e-3, 0.1, 4000, 4);
        let far = support_probe(E1, [0.0, 3.0, 0.0], 0.5, &cfg).unwrap();
        assert!(far.lower > 0.0, "{far:?}");
    }

    #[test]
    fn large_values_trivial_thresholds() {
        let s = ValueSamples::from_fn(3, 16, 3, |x| vec![x[0].sin(), 0.0, x[1].cos()]).unwrap();
        assert_eq!(large_values_fraction(&s, [1.0, 1.0, 1.0], 1.5, 0.0).unwrap(), 1.0);
        assert_eq!(large_values_fraction(&s, [1.0, 1.0, 1.0], 1.5, 1.5).unwrap(), 0.0);
        assert!(matches!(large_values_fraction(&s, [1.0; 3], 0.3, 0.5), Err(Error::Resolution(_))));
    }

    fn single_mode_basis(k: [i32; 3], a: [f64; 3], theta: f64) -> NoiseBasis {
        let mk = |k: [i32; 3], sign| NoiseMode { index: WaveIndex { k, j: 1, sign }, a, theta };
        NoiseBasis::from_modes(3, vec![mk(k, SignClass::Positive), mk([-k[0], -k[1], -k[2]], SignClass::Negative)])
            .unwrap()
    }

    #[test]
    fn single_mode_step_matches_closed_form() {
        let k = [1, 2, 0];
        let a = [-2.0 / 5f64.sqrt(), 1.0 / 5f64.sqrt(), 0.0];
        let theta = 0.3;
        let basis = single_mode_basis(k, a, theta);
        let cfg = FiniteNConfig { n: 1, chi: 1.0, dt: 0.01, t_end: 0.01, seed: 0 };
        let sys = LagrangianSystem::with_basis(cfg, basis).unwrap();
        let noise = sample_increments(sys.basis(), 0.01, StreamKey::new(3, 0, 0)).unwrap();
        let (x0, b0) = ([0.4, 1.3, 2.0], [0.2, -0.5, 0.9]);
        let (x1, b1) = sys.step_particle(x0, b0, &noise).unwrap();
        let w = noise.increments[sys.basis().positive()[0]];
        let z = theta * Complex64::from_polar(1.0, x0[0] * 1.0 + x0[1] * 2.0) * w;
        let kb = b0[0] * 1.0 + b0[1] * 2.0;
        for i in 0..3 {
            let xe = (x0[i] - 2.0 * z.re * a[i]).rem_euclid(2.0 * PI);
            let be = b0[i] + 2.0 * z.im * kb * a[i];
            assert!((x1[i] - xe).abs() < 1e-13, "x {i}");
            assert!((b1[i] - be).abs() < 1e-13, "b {i}");
        }
    }

    #[test]
    fn empty_shell_freezes_particles() {
        let cfg = FiniteNConfig { n: 1, chi: 1.0, dt: 0.01, t_end: 0.05, seed: 0 };
        let sys = LagrangianSystem::with_basis(cfg, NoiseBasis::empty(3).unwrap()).unwrap();
        let x0 = [[1.0, 2.0, 3.0]];
        let b0 = [[0.1, 0.2, 0.3]];
        let out = sys.run(&x0, &b0, 0, |_| {}).unwrap();
        assert_eq!(out.b, b0.to_vec());
        assert_eq!(out.x.unwrap(), x0.to_vec());
    }

    #[test]
    fn velocity_matches_direct_sum() {
        let cfg = FiniteNConfig { n: 1, chi: 1.0, dt: 0.01, t_end: 0.01, seed: 0 };
        let sys = LagrangianSystem::new(cfg).unwrap();
        let noise = sample_increments(sys.basis(), 0.01, StreamKey::new(1, 0, 0)).unwrap();
        let x = [0.3, 2.2, 5.1];
        let (u, j) = sys.velocity_at(x, &noise);
        let mut ud = [0.0; 3];
        let mut jd = Matrix3::zeros();
        for (m, w) in sys.basis().modes().iter().zip(&noise.increments) {
            let k = m.k();
            let e = Complex64::from_polar(1.0, dot(k, x)) * m.theta * w;
            for l in 0..3 {
                ud[l] += (e * m.a[l]).re;
                for i in 0..3 {
                    jd[(i, l)] += (Complex64::i() * k[i] * e * m.a[l]).re;
                }
            }
        }
        for l in 0..3 {
            assert!((u[l] - ud[l]).abs() < 1e-13);
        }
        assert!((j - jd).norm() < 1e-12);
        assert!(j.trace().abs() < 1e-13);
    }

    #[test]
    fn finite_n_stretches_on_average() {
        let cfg = FiniteNConfig { n: 2, chi: 1.0, dt: 2e-3, t_end: 0.1, seed: 17 };
        let sys = LagrangianSystem::new(cfg).unwrap();
        let x0 = [[0.5, 1.0, 1.5], [3.0, 0.2, 4.0]];
        let b0 = [E1, [0.0, 0.6, 0.8]];
        let steps = step_count(cfg.t_end, cfg.dt).unwrap() + 1;
        let mut sums = vec![0.0; steps];
        let mut times = vec![0.0; steps];
        let envs = 200;
        for env in 0..envs {
            let mut s = 0;
            sys.run(&x0, &b0, env, |e| {
                times[s] = e.t;
                sums[s] += e.b.iter().map(|b| 0.5 * norm_sq(*b).ln()).sum::<f64>();
                s += 1;
            })
            .unwrap();
        }
        let slope = crate::stats::fit_slope(&times, &sums).unwrap() / (envs as f64 * 2.0);
        assert!(slope > 0.5, "{slope}");
    }

    #[test]
    fn field_value_matches_synthesis() {
        let grid = SpectralGrid::new(3, 3).unwrap();
        let f = SpectralVectorField::from_fn(&grid, |x| [x[1].sin(), (x[2] + x[0]).cos(), 0.5]);
        let phys = f.to_physical();
        for i in [0, 17, 400] {
            let v = field_value_at(&f, grid.point(i));
            for c in 0..3 {
                assert!((v[c] - phys[i][c]).abs() < 1e-12);
            }
        }
    }
}
