//! Experiment drivers: each acceptance criterion as a function of typed
//! parameters, returning checks and CSV tables.

use std::f64::consts::{LN_2, PI};
use std::time::Instant;

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::CsvTable;
use crate::lagrangian::{
    empirical_law, large_values_fraction, simulate_limit_sde, support_probe, BinnedLaw, InitialLaw, SdeConfig,
};
use crate::noise::{shell_sums, NoiseBasis};
use crate::par::map_indexed;
use crate::scalar::{heat_limit, ScalarRunConfig, ScalarScheme, ScalarSolver};
use crate::spectral::{SpectralGrid, SpectralScalarField, SpectralVectorField};
use crate::stats::{fit_slope, Estimate};
use crate::vector::{mean_field_pairing, VectorRunConfig, VectorSolver};
use crate::vlasov::{
    a_matrix, c_l, fitted_growth_rate, l_matrix, moment_growth_rate, scalar_limit_pairing, BGridDensity, FpSolver,
    LnTensor,
};
use crate::young::{
    empirical_measure, mean_field, rho_distance, second_moment, CellGrid, GriddedYoungMeasure, MeasureMetricFamily,
    ValueBins, ValueSamples,
};

/// Criteria whose primary check is known not to hold at desk scale; the
/// suite reports them as failing and verifies their supplemental checks.
pub const KNOWN_GAPS: &[u32] = &[6];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Le,
    Lt,
    Ge,
    Gt,
}

impl Relation {
    fn holds(self, measured: f64, threshold: f64) -> bool {
        match self {
            Relation::Le => measured <= threshold,
            Relation::Lt => measured < threshold,
            Relation::Ge => measured >= threshold,
            Relation::Gt => measured > threshold,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Lt => "<",
            Relation::Ge => ">=",
            Relation::Gt => ">",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub relation: Relation,
    pub threshold: f64,
    pub pass: bool,
    /// Not part of the criterion itself.
    pub supplemental: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, measured: f64, relation: Relation, threshold: f64) -> Self {
        let pass = relation.holds(measured, threshold);
        Self { name: name.into(), measured, relation, threshold, pass, supplemental: false }
    }

    pub fn le(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self::new(name, measured, Relation::Le, threshold)
    }

    pub fn lt(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self::new(name, measured, Relation::Lt, threshold)
    }

    pub fn gt(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self::new(name, measured, Relation::Gt, threshold)
    }

    pub fn supplemental(mut self) -> Self {
        self.supplemental = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionOutcome {
    pub id: u32,
    pub title: String,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub seconds: f64,
}

impl CriterionOutcome {
    fn new(id: u32, title: &str, checks: Vec<Check>, started: Instant) -> Self {
        let pass = checks.iter().filter(|c| !c.supplemental).all(|c| c.pass);
        Self { id, title: title.into(), checks, pass, seconds: started.elapsed().as_secs_f64() }
    }

    pub fn known_gap(&self) -> bool {
        KNOWN_GAPS.contains(&self.id)
    }

    pub fn supplemental_pass(&self) -> bool {
        self.checks.iter().filter(|c| c.supplemental).all(|c| c.pass)
    }

    /// One line: id, verdict, title and the first failing (or last) check.
    pub fn summary_line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let shown = self.checks.iter().find(|c| !c.pass && !c.supplemental).or(self.checks.last());
        let detail = shown
            .map(|c| format!("{} = {:.6e} ({} {:e})", c.name, c.measured, c.relation.symbol(), c.threshold))
            .unwrap_or_default();
        let gap = if self.known_gap() { " [known gap]" } else { "" };
        format!("criterion {:>2} {verdict}{gap}: {} | {detail} | {:.1} s", self.id, self.title, self.seconds)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub outcomes: Vec<CriterionOutcome>,
    pub tables: Vec<CsvTable>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ScalarConverge,
    ScalarConserve,
    VectorEnergy,
    VlasovFp,
    LagrangianMc,
    Occupation,
    LnConverge,
    Report,
}

impl ExperimentKind {
    pub const RUNNABLE: [ExperimentKind; 7] = [
        ExperimentKind::LnConverge,
        ExperimentKind::ScalarConserve,
        ExperimentKind::ScalarConverge,
        ExperimentKind::VectorEnergy,
        ExperimentKind::VlasovFp,
        ExperimentKind::LagrangianMc,
        ExperimentKind::Occupation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ScalarConverge => "scalar-converge",
            ExperimentKind::ScalarConserve => "scalar-conserve",
            ExperimentKind::VectorEnergy => "vector-energy",
            ExperimentKind::VlasovFp => "vlasov-fp",
            ExperimentKind::LagrangianMc => "lagrangian-mc",
            ExperimentKind::Occupation => "occupation",
            ExperimentKind::LnConverge => "ln-converge",
            ExperimentKind::Report => "report",
        }
    }

    /// Criteria evaluated by the experiment.
    pub fn criteria(self) -> &'static [u32] {
        match self {
            ExperimentKind::LnConverge => &[1, 2, 7],
            ExperimentKind::ScalarConserve => &[3, 5],
            ExperimentKind::ScalarConverge => &[4],
            ExperimentKind::VectorEnergy => &[6],
            ExperimentKind::VlasovFp => &[8, 9],
            ExperimentKind::LagrangianMc => &[10],
            ExperimentKind::Occupation => &[11, 12],
            ExperimentKind::Report => &[],
        }
    }
}

fn parse_params<P: DeserializeOwned>(value: &serde_json::Value) -> Result<P> {
    let value = if value.is_null() { serde_json::Value::Object(Default::default()) } else { value.clone() };
    serde_json::from_value(value).map_err(|e| Error::Config(format!("parameters: {e}")))
}

/// Parses `parameters` for `kind`, filling defaults; returns the resolved
/// parameters as JSON.
pub fn resolve_params(kind: ExperimentKind, value: &serde_json::Value) -> Result<serde_json::Value> {
    let v = match kind {
        ExperimentKind::LnConverge => serde_json::to_value(parse_params::<LnConvergeParams>(value)?)?,
        ExperimentKind::ScalarConserve => serde_json::to_value(parse_params::<ScalarConserveParams>(value)?)?,
        ExperimentKind::ScalarConverge => serde_json::to_value(parse_params::<ScalarConvergeParams>(value)?)?,
        ExperimentKind::VectorEnergy => serde_json::to_value(parse_params::<VectorEnergyParams>(value)?)?,
        ExperimentKind::VlasovFp => serde_json::to_value(parse_params::<VlasovFpParams>(value)?)?,
        ExperimentKind::LagrangianMc => serde_json::to_value(parse_params::<LagrangianMcParams>(value)?)?,
        ExperimentKind::Occupation => serde_json::to_value(parse_params::<OccupationParams>(value)?)?,
        ExperimentKind::Report => {
            parse_params::<EmptyParams>(value)?;
            serde_json::json!({})
        }
    };
    Ok(v)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmptyParams {}

/// Runs one experiment with (already resolved or raw) parameters.
pub fn run_experiment(kind: ExperimentKind, params: &serde_json::Value, seed: u64) -> Result<ExperimentOutput> {
    match kind {
        ExperimentKind::LnConverge => ln_converge(&parse_params(params)?, seed),
        ExperimentKind::ScalarConserve => scalar_conserve(&parse_params(params)?),
        ExperimentKind::ScalarConverge => scalar_converge(&parse_params(params)?, seed),
        ExperimentKind::VectorEnergy => vector_energy(&parse_params(params)?, seed),
        ExperimentKind::VlasovFp => vlasov_fp(&parse_params(params)?, seed),
        ExperimentKind::LagrangianMc => lagrangian_mc(&parse_params(params)?, seed),
        ExperimentKind::Occupation => occupation(&parse_params(params)?, seed),
        ExperimentKind::Report => Err(Error::Config("report is not a runnable experiment".into())),
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

fn at_least(name: &str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be >= {min}, got {v}")))
    }
}

/// Largest `dt <= dt_max` that divides `t_end` into whole steps.
fn fitted_dt(t_end: f64, dt_max: f64) -> f64 {
    t_end / (t_end / dt_max).ceil()
}

// ---------------------------------------------------------------- ln-converge

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LnConvergeParams {
    pub shells: Vec<u32>,
    pub isotropy_shells: Vec<u32>,
    pub directions: usize,
}

impl Default for LnConvergeParams {
    fn default() -> Self {
        Self { shells: vec![8, 16, 32], isotropy_shells: vec![1, 2, 4, 8], directions: 100 }
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if r > 1e-3 {
            return [v[0] / r, v[1] / r, v[2] / r];
        }
    }
}

fn max_ratio(xs: &[f64]) -> f64 {
    xs.windows(2).map(|w| w[1] / w[0]).fold(f64::NEG_INFINITY, f64::max)
}

pub fn ln_converge(p: &LnConvergeParams, seed: u64) -> Result<ExperimentOutput> {
    if p.shells.len() < 2 || p.shells.iter().chain(&p.isotropy_shells).any(|&n| n == 0) {
        return Err(Error::Config("need at least two shells, all >= 1".into()));
    }
    at_least("directions", p.directions, 1)?;
    let mut out = ExperimentOutput::default();

    let started = Instant::now();
    let target = 4.0 * PI * LN_2;
    let mut table = CsvTable::new("alpha_n", &["n", "alpha_n", "abs_error", "n_times_error"]);
    let mut errs = Vec::new();
    let mut scaled = Vec::new();
    for &n in &p.shells {
        let a = shell_sums(n, 3)?.alpha_n;
        let e = (a - target).abs();
        errs.push(e);
        scaled.push(n as f64 * e);
        table.push(vec![n as f64, a, e, n as f64 * e])?;
    }
    let ratios: Vec<f64> = scaled.windows(2).map(|w| w[1] / w[0]).collect();
    let checks = vec![
        Check::lt("max successive error ratio", max_ratio(&errs), 1.0),
        Check::new("min ratio of n*error", ratios.iter().copied().fold(f64::INFINITY, f64::min), Relation::Ge, 0.3),
        Check::le("max ratio of n*error", ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max), 3.0),
    ];
    out.outcomes.push(CriterionOutcome::new(1, "shell sums approach 4 pi ln 2 at rate 1/n", checks, started));
    out.tables.push(table);

    let started = Instant::now();
    let mut table = CsvTable::new("isotropy", &["n", "eta_n", "max_abs_error"]);
    let mut worst = 0.0f64;
    for &n in &p.isotropy_shells {
        let basis = NoiseBasis::vector(n, 1.0)?;
        let eta = shell_sums(n, 3)?.eta_n;
        let c = basis.covariance_tensor();
        let mut err = 0.0f64;
        for (i, row) in c.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let expected = if i == j { 2.0 / 3.0 * eta } else { 0.0 };
                err = err.max((v - expected).abs());
            }
        }
        worst = worst.max(err);
        table.push(vec![n as f64, eta, err])?;
    }
    let checks = vec![Check::le("max componentwise error", worst, 1e-12)];
    out.outcomes.push(CriterionOutcome::new(2, "noise covariance is (2/3) eta_n I", checks, started));
    out.tables.push(table);

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<[f64; 3]> = (0..p.directions).map(|_| random_unit(&mut rng)).collect();
    let mut table = CsvTable::new("ln_convergence", &["n", "sup_frobenius_error"]);
    let mut sups = Vec::new();
    for &n in &p.shells {
        let ln = LnTensor::new(n)?;
        let sup = dirs.iter().map(|&b| (ln.matrix(b) - l_matrix(b, 1.0)).norm()).fold(0.0, f64::max);
        sups.push(sup);
        table.push(vec![n as f64, sup])?;
    }
    let c = c_l(1.0);
    let mut eig_err = 0.0f64;
    let mut sqrt_err = 0.0f64;
    let mut div_err = 0.0f64;
    let h = 1e-4;
    for &b in &dirs {
        let mut ev: Vec<f64> = SymmetricEigen::new(l_matrix(b, 1.0)).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        eig_err = eig_err.max((ev[0] - c).abs()).max((ev[1] - 2.0 * c).abs()).max((ev[2] - 2.0 * c).abs());
        let s: f64 = rng.random_range(0.1..3.0);
        let bs = [s * b[0], s * b[1], s * b[2]];
        let a = a_matrix(bs, 1.0);
        sqrt_err = sqrt_err.max((a * a - l_matrix(bs, 1.0)).abs().max());
        for j in 0..3 {
            let mut div = 0.0;
            for i in 0..3 {
                let mut plus = bs;
                let mut minus = bs;
                plus[i] += h;
                minus[i] -= h;
                div += (l_matrix(plus, 1.0)[(i, j)] - l_matrix(minus, 1.0)[(i, j)]) / (2.0 * h);
            }
            div_err = div_err.max(div.abs());
        }
    }
    let checks = vec![
        Check::lt("max successive sup-error ratio", max_ratio(&sups), 1.0),
        Check::le("eigenvalue error at |b| = 1", eig_err, 1e-10),
        Check::le("|c_L - 1.1613792|", (c - 1.1613792).abs(), 5e-8),
        Check::le("max |A A - L|", sqrt_err, 1e-12),
        Check::le("max finite-difference column divergence", div_err, 1e-6),
    ];
    out.outcomes.push(CriterionOutcome::new(
        7,
        "L^n converges to L; L eigenstructure, square root, divergence",
        checks,
        started,
    ));
    out.tables.push(table);
    Ok(out)
}

// ------------------------------------------------------------ scalar-conserve

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalarConserveParams {
    pub d: usize,
    pub n: u32,
    pub k_max: u32,
    pub dt: f64,
    pub t_end: f64,
    pub kappa_t: f64,
    pub record_every: usize,
    /// Grid bandwidth for the limit-measure pairings.
    pub limit_k_max: u32,
    /// Values of `kappa_T t` at which the limit pairings are evaluated.
    pub limit_times: Vec<f64>,
}

impl Default for ScalarConserveParams {
    fn default() -> Self {
        Self {
            d: 2,
            n: 4,
            k_max: 16,
            dt: 1e-4,
            t_end: 0.1,
            kappa_t: 1.0,
            record_every: 50,
            limit_k_max: 8,
            limit_times: vec![0.0, 0.05, 0.1, 0.25, 0.5, 1.0],
        }
    }
}

/// Smooth band-limited initial scalar used throughout the scalar experiments.
pub fn scalar_initial(grid: &std::sync::Arc<SpectralGrid>) -> SpectralScalarField {
    SpectralScalarField::from_fn(grid, |x| x[0].cos() + (x[1] + 0.3).sin() + 0.5 * (2.0 * x[0] + x[1]).cos())
}

pub fn scalar_conserve(p: &ScalarConserveParams) -> Result<ExperimentOutput> {
    positive("kappa_t", p.kappa_t)?;
    at_least("record_every", p.record_every, 1)?;
    if p.limit_times.iter().any(|t| !(*t >= 0.0)) || !p.limit_times.contains(&0.5) {
        return Err(Error::Config("limit_times must be nonnegative and include 0.5".into()));
    }
    let mut out = ExperimentOutput::default();

    let started = Instant::now();
    let cfg = ScalarRunConfig {
        d: p.d,
        n: p.n,
        kappa_t: p.kappa_t,
        k_max: p.k_max,
        dt: p.dt,
        t_end: p.t_end,
        seed: 0,
        scheme: ScalarScheme::Midpoint,
    };
    let solver = ScalarSolver::new(cfg)?;
    let theta0 = scalar_initial(solver.grid());
    solver.check_initial(&theta0)?;
    let e0 = theta0.norm_sq();
    let mut table = CsvTable::new("scalar_conserve", &["t", "norm_sq", "rel_drift"]);
    let mut worst = 0.0f64;
    let every = p.record_every;
    let steps = cfg.steps();
    let mut rows = Vec::new();
    solver.run(&theta0, 0, |s, t, f| {
        let e = f.norm_sq();
        let drift = (e - e0).abs() / e0;
        worst = worst.max(drift);
        if s % every == 0 || s == steps {
            rows.push(vec![t, e, drift]);
        }
    })?;
    for r in rows {
        table.push(r)?;
    }
    let checks = vec![Check::le("max relative drift of ||theta||^2", worst, 1e-6)];
    out.outcomes.push(CriterionOutcome::new(3, "midpoint scheme conserves the L2 norm pathwise", checks, started));
    out.tables.push(table);

    let started = Instant::now();
    let grid = SpectralGrid::new(p.d, p.limit_k_max)?;
    let theta0 = scalar_initial(&grid);
    let norm0 = theta0.norm_sq();
    let cap = 4.0
        * crate::scalar::physical_range(&theta0).1.abs().max(crate::scalar::physical_range(&theta0).0.abs()).powi(2);
    let phi = |v: f64| (v * v).min(cap);
    let mut table =
        CsvTable::new("scalar_limit", &["kappa_t_t", "young_second_moment", "dirac_second_moment", "bound"]);
    let mut const_err = 0.0f64;
    let mut bound_excess = f64::NEG_INFINITY;
    let mut gap_half = f64::NAN;
    for &s in &p.limit_times {
        let t = s / p.kappa_t;
        let young = scalar_limit_pairing(&theta0, t, p.kappa_t, phi, |_| 1.0)?;
        let dirac = heat_limit(&theta0, t, p.kappa_t)?.norm_sq();
        let bound = norm0 * (-2.0 * s).exp();
        const_err = const_err.max((young - norm0).abs() / norm0);
        bound_excess = bound_excess.max(dirac - bound);
        if s == 0.5 {
            gap_half = young - dirac;
        }
        table.push(vec![s, young, dirac, bound])?;
    }
    let checks = vec![
        Check::le("max relative change of the limit second moment", const_err, 1e-8),
        Check::le("max excess of the Dirac second moment over the decay bound", bound_excess, 1e-8),
        Check::gt("second-moment gap at kappa_T t = 0.5", gap_half, 0.0),
    ];
    out.outcomes.push(CriterionOutcome::new(
        5,
        "limit scalar Young measure keeps ||theta0||^2; the Dirac of the mean decays",
        checks,
        started,
    ));
    out.tables.push(table);
    Ok(out)
}

// ------------------------------------------------------------ scalar-converge

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalarConvergeParams {
    pub d: usize,
    pub shells: Vec<u32>,
    pub paths: usize,
    pub t_end: f64,
    pub dt: f64,
    pub kappa_t: f64,
    /// `K_max = 2n + k_pad`.
    pub k_pad: u32,
}

impl Default for ScalarConvergeParams {
    fn default() -> Self {
        Self { d: 2, shells: vec![4, 8], paths: 400, t_end: 0.05, dt: 1e-3, kappa_t: 1.0, k_pad: 2 }
    }
}

pub fn scalar_converge(p: &ScalarConvergeParams, seed: u64) -> Result<ExperimentOutput> {
    if p.shells.len() < 2 {
        return Err(Error::Config("need at least two shells".into()));
    }
    at_least("paths", p.paths, 2)?;
    let started = Instant::now();
    let mut table = CsvTable::new("scalar_weak_error", &["n", "k_max", "mean_sq_error", "stderr"]);
    let mut logs_n = Vec::new();
    let mut logs_e = Vec::new();
    let mut rel_var = 0.0;
    for &n in &p.shells {
        let k_max = 2 * n + p.k_pad;
        let cfg = ScalarRunConfig {
            d: p.d,
            n,
            kappa_t: p.kappa_t,
            k_max,
            dt: p.dt,
            t_end: p.t_end,
            seed,
            scheme: ScalarScheme::Midpoint,
        };
        let solver = ScalarSolver::new(cfg)?;
        let theta0 = SpectralScalarField::from_fn(solver.grid(), |x| x[0].cos() + (x[1] + 0.3).sin());
        let psi = SpectralScalarField::from_fn(solver.grid(), |x| x[0].cos() + 0.5 * x[1].sin());
        let target = heat_limit(&theta0, p.t_end, p.kappa_t)?.inner(&psi);
        let samples = map_indexed(p.paths, |path| {
            solver.run(&theta0, path as u64, |_, _, _| {}).map(|f| (f.inner(&psi) - target).powi(2))
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
        let est = Estimate::from_samples(&samples)?;
        table.push(vec![n as f64, k_max as f64, est.mean, est.stderr])?;
        logs_n.push((n as f64).ln());
        logs_e.push(est.mean.ln());
        rel_var += (est.stderr / est.mean).powi(2);
    }
    let slope = fit_slope(&logs_n, &logs_e)?;
    let span = logs_n[logs_n.len() - 1] - logs_n[0];
    let slope_se = rel_var.sqrt() / span;
    let threshold = -(p.d as f64) + 0.7;
    let checks = vec![
        Check::le("fitted log-log slope", slope, threshold),
        Check::le("slope + 1 standard error", slope + slope_se, threshold).supplemental(),
    ];
    let mut out = ExperimentOutput::default();
    out.outcomes.push(CriterionOutcome::new(4, "scalar weak error decays in n", checks, started));
    out.tables.push(table);
    Ok(out)
}

// --------------------------------------------------------------- vector-energy

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VectorEnergyParams {
    pub n: u32,
    pub k_max: u32,
    pub t_end: f64,
    pub paths: usize,
    pub chi: f64,
}

impl Default for VectorEnergyParams {
    fn default() -> Self {
        Self { n: 2, k_max: 8, t_end: 0.05, paths: 200, chi: 1.0 }
    }
}

/// Arnold-Beltrami-Childress field with unit coefficients.
pub fn abc_field(grid: &std::sync::Arc<SpectralGrid>) -> SpectralVectorField {
    SpectralVectorField::from_fn(grid, |x| [x[2].sin() + x[1].cos(), x[0].sin() + x[2].cos(), x[1].sin() + x[0].cos()])
}

pub fn vector_energy(p: &VectorEnergyParams, seed: u64) -> Result<ExperimentOutput> {
    at_least("paths", p.paths, 2)?;
    positive("t_end", p.t_end)?;
    let started = Instant::now();
    let dt = fitted_dt(p.t_end, VectorRunConfig::max_stable_dt(p.n, p.chi, p.k_max)?);
    let cfg = VectorRunConfig { n: p.n, chi: p.chi, k_max: p.k_max, dt, t_end: p.t_end, seed, gamma: 4.0 };
    let solver = VectorSolver::new(cfg)?;
    let b0 = abc_field(solver.grid());
    solver.check_initial(&b0)?;
    let per_path = map_indexed(p.paths, |path| {
        let (mut residual, mut loss) = (0.0, 0.0);
        solver
            .run(&b0, path as u64, |r| {
                let d = &r.diagnostics;
                residual += d.energy_increment - d.martingale - d.drift;
                loss += d.truncation_loss;
            })
            .map(|b| (residual, loss, b.norm_sq()))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut table = CsvTable::new("vector_energy", &["path", "residual", "truncation_loss", "final_energy"]);
    for (i, r) in per_path.iter().enumerate() {
        table.push(vec![i as f64, r.0, r.1, r.2])?;
    }
    let raw = Estimate::from_samples(&per_path.iter().map(|r| r.0).collect::<Vec<_>>())?;
    let corrected = Estimate::from_samples(&per_path.iter().map(|r| r.0 + r.1).collect::<Vec<_>>())?;
    let checks = vec![
        Check::le("|mean residual| / stderr", raw.mean.abs() / raw.stderr, 3.0),
        Check::le("|mean residual + truncation loss| / stderr", corrected.mean.abs() / corrected.stderr, 3.0)
            .supplemental(),
    ];
    let mut out = ExperimentOutput::default();
    out.outcomes.push(CriterionOutcome::new(6, "Ito energy identity for the vector field", checks, started));
    out.tables.push(table);
    Ok(out)
}

// ------------------------------------------------------------------ vlasov-fp

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VlasovFpParams {
    pub half_width: f64,
    pub cells: usize,
    pub t_end: f64,
    pub init_center: [f64; 3],
    pub init_sigma: f64,
    pub samples: usize,
    pub sde_paths: usize,
    pub sde_dt: f64,
    pub tv_bins: usize,
    pub chi: f64,
}

impl Default for VlasovFpParams {
    fn default() -> Self {
        Self {
            half_width: 5.0,
            cells: 64,
            t_end: 0.05,
            init_center: [1.0, 0.0, 0.0],
            init_sigma: 0.2,
            samples: 25,
            sde_paths: 100_000,
            sde_dt: 1e-4,
            tv_bins: 16,
            chi: 1.0,
        }
    }
}

pub fn vlasov_fp(p: &VlasovFpParams, seed: u64) -> Result<ExperimentOutput> {
    positive("t_end", p.t_end)?;
    positive("init_sigma", p.init_sigma)?;
    at_least("samples", p.samples, 2)?;
    at_least("sde_paths", p.sde_paths, 2)?;
    let mut out = ExperimentOutput::default();
    let started = Instant::now();
    let rate = moment_growth_rate(p.chi);
    let dt = fitted_dt(p.t_end, FpSolver::stable_dt(p.chi, p.half_width, p.cells)?);
    let fp = FpSolver::new(p.chi, p.half_width, p.cells, dt)?;
    let mut rho = BGridDensity::gaussian(p.half_width, p.cells, p.init_center, p.init_sigma)?;
    let steps = (p.t_end / dt).round() as usize;
    let every = (steps / p.samples).max(1);
    let samples = fp.evolve(&mut rho, steps, every)?;
    let mut table = CsvTable::new("fp_moments", &["t", "mass", "m2", "boundary_mass"]);
    for s in &samples {
        table.push(vec![s.t, s.mass, s.m2, s.boundary_mass])?;
    }
    out.tables.push(table);
    let fp_rate = fitted_growth_rate(&samples)?;
    let boundary = samples.iter().map(|s| s.boundary_mass).fold(0.0, f64::max);

    let sde_cfg = SdeConfig { chi: p.chi, ..SdeConfig::new(p.sde_dt, p.t_end, p.sde_paths, seed) };
    let point = simulate_limit_sde(&InitialLaw::Point { b: [1.0, 0.0, 0.0] }, &sde_cfg)?;
    let ratio = point.growth_ratio()?;
    let expected = (rate * p.t_end).exp();
    let sde_rate = ratio.mean.ln() / p.t_end;
    let mut table = CsvTable::new("sde_moments", &["paths", "mean_ratio", "stderr", "expected_ratio", "implied_rate"]);
    table.push(vec![p.sde_paths as f64, ratio.mean, ratio.stderr, expected, sde_rate])?;
    out.tables.push(table);
    let checks = vec![
        Check::le("relative error of the FP growth rate", (fp_rate - rate).abs() / rate, 0.05),
        Check::lt("max FP boundary mass", boundary, 1e-4),
        Check::le("|SDE ratio - exp(rate T)| / stderr", (ratio.mean - expected).abs() / ratio.stderr, 3.0),
        Check::le("origin-guard steps in SDE paths", point.floor_hits as f64, 0.0).supplemental(),
    ];
    out.outcomes.push(CriterionOutcome::new(8, "second moment grows at 16 pi chi ln 2 / 3", checks, started));

    let started = Instant::now();
    let init = InitialLaw::Gaussian { mean: p.init_center, sigma: p.init_sigma };
    let sde_cfg = SdeConfig { seed: seed.wrapping_add(1), ..sde_cfg };
    let gauss = simulate_limit_sde(&init, &sde_cfg)?;
    let bins = ValueBins::new(3, -p.half_width, p.half_width, p.tv_bins)?;
    let sde_law = empirical_law(&gauss.b, bins)?;
    let fp_law = BinnedLaw::from_density(&rho, bins)?;
    let tv = sde_law.total_variation(&fp_law)?;
    let mut table = CsvTable::new("law_comparison", &["bin", "sde_prob", "sde_stderr", "fp_prob"]);
    for (i, ((a, s), b)) in sde_law.probs.iter().zip(&sde_law.stderr).zip(&fp_law.probs).enumerate() {
        if *a > 0.0 || *b > 1e-12 {
            table.push(vec![i as f64, *a, *s, *b])?;
        }
    }
    out.tables.push(table);
    let checks = vec![Check::le("binned total variation", tv, 0.05)];
    out.outcomes.push(CriterionOutcome::new(9, "SDE law matches the Fokker-Planck density", checks, started));
    Ok(out)
}

// --------------------------------------------------------------- lagrangian-mc

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LagrangianMcParams {
    pub probe_paths: usize,
    pub probe_t_end: f64,
    pub probe_dt: f64,
    pub b0: [f64; 3],
    pub target: [f64; 3],
    pub eps: f64,
    pub n: u32,
    pub k_max: u32,
    pub t_end: f64,
    pub record_times: usize,
    pub x0: [f64; 3],
    pub radius: f64,
}

impl Default for LagrangianMcParams {
    fn default() -> Self {
        Self {
            probe_paths: 10_000,
            probe_t_end: 0.2,
            probe_dt: 1e-3,
            b0: [1.0, 0.0, 0.0],
            target: [0.0, 3.0, 0.0],
            eps: 1.0,
            n: 8,
            k_max: 17,
            t_end: 0.1,
            record_times: 5,
            x0: [PI, PI, PI],
            radius: 1.0,
        }
    }
}

fn sup_norm(b: &SpectralVectorField) -> f64 {
    b.to_physical().iter().map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()).fold(0.0, f64::max)
}

pub fn lagrangian_mc(p: &LagrangianMcParams, seed: u64) -> Result<ExperimentOutput> {
    let norm_b0 = (p.b0.iter().map(|c| c * c).sum::<f64>()).sqrt();
    positive("|b0|", norm_b0)?;
    at_least("record_times", p.record_times, 1)?;
    let started = Instant::now();
    let cfg = SdeConfig::new(p.probe_dt, p.probe_t_end, p.probe_paths, seed);
    let probe = support_probe(p.b0, p.target, p.eps, &cfg)?;
    let mut out = ExperimentOutput::default();
    let mut table = CsvTable::new("support_probe", &["paths", "hits", "fraction", "lower", "upper"]);
    table.push(vec![probe.paths as f64, probe.hits as f64, probe.fraction, probe.lower, probe.upper])?;
    out.tables.push(table);

    let dt = fitted_dt(p.t_end, VectorRunConfig::max_stable_dt(p.n, 1.0, p.k_max)?);
    let vcfg = VectorRunConfig { n: p.n, chi: 1.0, k_max: p.k_max, dt, t_end: p.t_end, seed, gamma: 4.0 };
    let solver = VectorSolver::new(vcfg)?;
    let b0 = abc_field(solver.grid());
    solver.check_initial(&b0)?;
    let big_r = 2.0 * sup_norm(&b0);
    let steps = vcfg.steps();
    let every = (steps / p.record_times).max(1);
    let mut table = CsvTable::new("large_values", &["t", "fraction", "sup_norm"]);
    let mut fractions = Vec::new();
    let mut failure = None;
    solver.run(&b0, 0, |r| {
        if r.step % every == 0 || r.step == steps {
            let samples = ValueSamples::from_vector(r.after);
            match large_values_fraction(&samples, p.x0, p.radius, big_r) {
                Ok(f) => {
                    fractions.push(f);
                    let _ = table.push(vec![r.t, f, sup_norm(r.after)]);
                }
                Err(e) => failure = Some(e),
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    out.tables.push(table);
    let last = fractions.last().copied().unwrap_or(0.0);
    let checks = vec![
        Check::gt("lower 3-sigma bound of the hit fraction", probe.lower, 0.0),
        Check::gt("large-values fraction at the final time", last, 0.0),
    ];
    out.outcomes.push(CriterionOutcome::new(10, "support reaches |b*| = 3|b0|; large values appear", checks, started));
    Ok(out)
}

// ----------------------------------------------------------------- occupation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OccupationParams {
    pub shells: Vec<u32>,
    pub paths: usize,
    pub t_end: f64,
    pub cells: usize,
    pub bins: usize,
    pub scalar_n: u32,
    pub scalar_k_max: u32,
    pub scalar_dt: f64,
    pub scalar_t_end: f64,
    pub scalar_cells: usize,
    pub scalar_bins: usize,
    pub scalar_records: usize,
    pub triples: usize,
    pub family_size: usize,
}

impl Default for OccupationParams {
    fn default() -> Self {
        Self {
            shells: vec![4, 8],
            paths: 16,
            t_end: 0.01,
            cells: 12,
            bins: 400,
            scalar_n: 4,
            scalar_k_max: 16,
            scalar_dt: 1e-4,
            scalar_t_end: 0.1,
            scalar_cells: 10,
            scalar_bins: 2000,
            scalar_records: 10,
            triples: 100,
            family_size: 64,
        }
    }
}

fn shear_field(grid: &std::sync::Arc<SpectralGrid>) -> SpectralVectorField {
    SpectralVectorField::from_fn(grid, |x| [x[2].sin(), x[2].cos(), 0.0])
}

/// `sum_c vol_c <mean_field(c), phi(x_c)>` for the empirical measure of `b`.
fn measured_pairing(b: &SpectralVectorField, cells: CellGrid, bins: ValueBins) -> Result<(f64, f64)> {
    let mu = empirical_measure(&ValueSamples::from_vector(b), cells, bins)?;
    let mf = mean_field(&mu);
    let vol = cells.cell_volume();
    let v = (0..cells.len())
        .map(|c| {
            let x = cells.center(c);
            vol * (mf.value[c][0] * x[2].sin() + mf.value[c][1] * x[2].cos())
        })
        .sum();
    Ok((v, mf.overflow))
}

fn random_measure(rng: &mut ChaCha8Rng, cells: CellGrid, bins: ValueBins) -> Result<GriddedYoungMeasure> {
    let raw: Vec<f64> = (0..cells.len() * (bins.len() + 1))
        .map(|_| if rng.random_bool(0.4) { rng.random_range(0.0..1.0) } else { 0.0 })
        .collect();
    let mut raw = raw;
    for c in 0..cells.len() {
        raw[c * (bins.len() + 1)] += 1e-3;
    }
    GriddedYoungMeasure::normalized(cells, bins, raw)
}

pub fn occupation(p: &OccupationParams, seed: u64) -> Result<ExperimentOutput> {
    if p.shells.len() < 2 {
        return Err(Error::Config("need at least two shells".into()));
    }
    at_least("paths", p.paths, 2)?;
    at_least("scalar_records", p.scalar_records, 1)?;
    let mut out = ExperimentOutput::default();

    let started = Instant::now();
    let mut table = CsvTable::new(
        "mean_field",
        &["n", "k_max", "target", "mean_deviation", "stderr", "bound", "exact_pairing_deviation", "max_overflow"],
    );
    let mut bounds = Vec::new();
    for &n in &p.shells {
        let k_max = 2 * n + 1;
        let dt = fitted_dt(p.t_end, VectorRunConfig::max_stable_dt(n, 1.0, k_max)?);
        let cfg = VectorRunConfig { n, chi: 1.0, k_max, dt, t_end: p.t_end, seed, gamma: 4.0 };
        let solver = VectorSolver::new(cfg)?;
        let b0 = shear_field(solver.grid());
        let cells = CellGrid::new(3, p.cells)?;
        let bins = ValueBins::for_bound(3, sup_norm(&b0), p.bins)?;
        let (target, _) = measured_pairing(&b0, cells, bins)?;
        let exact_target = mean_field_pairing(&b0, &b0)?;
        let runs = map_indexed(p.paths, |path| {
            let b = solver.run(&b0, path as u64, |_| {})?;
            let (m, overflow) = measured_pairing(&b, cells, bins)?;
            Ok((m - target, mean_field_pairing(&b, &b0)? - exact_target, overflow))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let dev = Estimate::from_samples(&runs.iter().map(|r| r.0).collect::<Vec<_>>())?;
        let exact = Estimate::from_samples(&runs.iter().map(|r| r.1).collect::<Vec<_>>())?;
        let overflow = runs.iter().map(|r| r.2).fold(0.0, f64::max);
        let bound = dev.mean.abs() + 3.0 * dev.stderr;
        bounds.push(bound);
        table.push(vec![n as f64, k_max as f64, target, dev.mean, dev.stderr, bound, exact.mean, overflow])?;
    }
    out.tables.push(table);

    let cfg = ScalarRunConfig {
        d: 2,
        n: p.scalar_n,
        kappa_t: 1.0,
        k_max: p.scalar_k_max,
        dt: p.scalar_dt,
        t_end: p.scalar_t_end,
        seed,
        scheme: ScalarScheme::Midpoint,
    };
    let solver = ScalarSolver::new(cfg)?;
    let theta0 = scalar_initial(solver.grid());
    let (lo, hi) = crate::scalar::physical_range(&theta0);
    let bins = ValueBins::for_bound(1, lo.abs().max(hi.abs()), p.scalar_bins)?;
    let cells = CellGrid::new(2, p.scalar_cells)?;
    let steps = cfg.steps();
    let every = (steps / p.scalar_records).max(1);
    let mut moments = Vec::new();
    let mut failure = None;
    solver.run(&theta0, 0, |s, t, f| {
        if s % every == 0 || s == steps {
            match empirical_measure(&ValueSamples::from_scalar(f), cells, bins) {
                Ok(mu) => moments.push((t, second_moment(&mu).value)),
                Err(e) => failure = Some(e),
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let m0 = moments[0].1;
    let drift = moments.iter().map(|m| (m.1 - m0).abs() / m0).fold(0.0, f64::max);
    let mut table = CsvTable::new("scalar_young_moment", &["t", "second_moment"]);
    for (t, m) in &moments {
        table.push(vec![*t, *m])?;
    }
    out.tables.push(table);
    let checks = vec![
        Check::lt("ratio of deviation bounds (largest n / smallest n)", bounds[bounds.len() - 1] / bounds[0], 1.0),
        Check::le("max relative change of the scalar Young second moment", drift, 1e-3),
    ];
    out.outcomes.push(CriterionOutcome::new(
        11,
        "Young-measure mean reproduces the initial field; scalar second moment is conserved",
        checks,
        started,
    ));

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = CellGrid::new(2, 3)?;
    let bins = ValueBins::new(1, -2.0, 2.0, 8)?;
    let family = MeasureMetricFamily::new(2, 1, 2.0, p.family_size)?;
    let short = MeasureMetricFamily::new(2, 1, 2.0, 8)?;
    let (mut id_err, mut sym_err, mut tri_excess, mut tail_excess) =
        (0.0f64, 0.0f64, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..p.triples {
        let m = [
            random_measure(&mut rng, cells, bins)?,
            random_measure(&mut rng, cells, bins)?,
            random_measure(&mut rng, cells, bins)?,
        ];
        let d = |a: usize, b: usize| rho_distance(&m[a], &m[b], &family).map(|r| r.value);
        id_err = id_err.max(d(0, 0)?).max(d(1, 1)?);
        sym_err = sym_err.max((d(0, 1)? - d(1, 0)?).abs());
        tri_excess = tri_excess.max(d(0, 2)? - d(0, 1)? - d(1, 2)?);
        let full = rho_distance(&m[0], &m[1], &family)?;
        let cut = rho_distance(&m[0], &m[1], &short)?;
        tail_excess = tail_excess.max((full.value - cut.value) - cut.tail_bound);
    }
    let checks = vec![
        Check::le("max rho(mu, mu)", id_err, 0.0),
        Check::le("max |rho(mu, nu) - rho(nu, mu)|", sym_err, 0.0),
        Check::le("max triangle excess", tri_excess, 1e-15),
        Check::le("max excess of the truncation tail over its bound", tail_excess, 0.0),
    ];
    out.outcomes.push(CriterionOutcome::new(12, "rho is a metric with a bounded truncation tail", checks, started));
    Ok(out)
}
