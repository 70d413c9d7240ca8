//! Gridded Young measures, local occupation measures and the metric `rho`.
//!
//! A measure is stored as one probability vector over value bins per
//! x-cell. The last bin of every row is the overflow bin for values outside
//! the box; its mass is reported by every moment functional.

use std::f64::consts::PI;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{SpectralScalarField, SpectralVectorField};

/// Overflow fraction above which moment functionals carry a warning.
pub const OVERFLOW_WARNING: f64 = 0.01;
/// Minimum number of grid points inside an occupation ball.
pub const MIN_BALL_POINTS: usize = 100;
/// Default number of functions in the metric family.
pub const DEFAULT_FAMILY_SIZE: usize = 64;

const NORMALIZATION_TOL: f64 = 1e-12;

/// Field values sampled on the uniform grid of `T^d` with `n` points per side.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSamples {
    d: usize,
    n: usize,
    k: usize,
    values: Vec<f64>,
}

impl ValueSamples {
    /// `values` holds `k` numbers per grid point, row-major over the grid.
    pub fn new(d: usize, n: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        if d != 2 && d != 3 {
            return Err(Error::InvalidInput(format!("d must be 2 or 3, got {d}")));
        }
        if n == 0 || !(1..=3).contains(&k) {
            return Err(Error::InvalidInput(format!("need n >= 1 and 1 <= k <= 3, got n={n}, k={k}")));
        }
        let expected = n.pow(d as u32) * k;
        if values.len() != expected {
            return Err(Error::LengthMismatch { expected, got: values.len() });
        }
        Ok(Self { d, n, k, values })
    }

    pub fn from_scalar(field: &SpectralScalarField) -> Self {
        let g = field.grid();
        Self { d: g.dim(), n: g.size(), k: 1, values: field.to_physical() }
    }

    pub fn from_vector(field: &SpectralVectorField) -> Self {
        let g = field.grid();
        let values = field.to_physical().into_iter().flatten().collect();
        Self { d: g.dim(), n: g.size(), k: 3, values }
    }

    pub fn from_fn(d: usize, n: usize, k: usize, f: impl Fn([f64; 3]) -> Vec<f64>) -> Result<Self> {
        let len = n.pow(d as u32);
        let mut values = Vec::with_capacity(len * k);
        for i in 0..len {
            let v = f(grid_point(d, n, i));
            if v.len() != k {
                return Err(Error::LengthMismatch { expected: k, got: v.len() });
            }
            values.extend(v);
        }
        Self::new(d, n, k, values)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn value_dim(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        grid_point(self.d, self.n, i)
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    fn axis_indices(&self, i: usize) -> [usize; 3] {
        let n = self.n;
        if self.d == 2 {
            [i / n, i % n, 0]
        } else {
            [i / (n * n), (i / n) % n, i % n]
        }
    }
}

fn grid_point(d: usize, n: usize, i: usize) -> [f64; 3] {
    let h = 2.0 * PI / n as f64;
    if d == 2 {
        [(i / n) as f64 * h, (i % n) as f64 * h, 0.0]
    } else {
        [(i / (n * n)) as f64 * h, ((i / n) % n) as f64 * h, (i % n) as f64 * h]
    }
}

/// Partition of `T^d` into `per_side^d` congruent cubes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CellGrid {
    pub d: usize,
    pub per_side: usize,
}

impl CellGrid {
    pub fn new(d: usize, per_side: usize) -> Result<Self> {
        if (d != 2 && d != 3) || per_side == 0 {
            return Err(Error::InvalidInput(format!("bad cell grid d={d}, per_side={per_side}")));
        }
        Ok(Self { d, per_side })
    }

    pub fn len(&self) -> usize {
        self.per_side.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> f64 {
        2.0 * PI / self.per_side as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.width().powi(self.d as i32)
    }

    pub fn total_volume(&self) -> f64 {
        (2.0 * PI).powi(self.d as i32)
    }

    pub fn center(&self, c: usize) -> [f64; 3] {
        let m = self.per_side;
        let w = self.width();
        let idx = if self.d == 2 { [c / m, c % m, 0] } else { [c / (m * m), (c / m) % m, c % m] };
        let mut x = [0.0; 3];
        for a in 0..self.d {
            x[a] = (idx[a] as f64 + 0.5) * w;
        }
        x
    }

    fn cell_of_axes(&self, axes: [usize; 3], n: usize) -> usize {
        let m = self.per_side;
        let c = |j: usize| j * m / n;
        if self.d == 2 {
            c(axes[0]) * m + c(axes[1])
        } else {
            (c(axes[0]) * m + c(axes[1])) * m + c(axes[2])
        }
    }
}

/// Uniform bins over the box `[lo, hi]^k`; index `len()` is the overflow bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueBins {
    pub k: usize,
    pub lo: f64,
    pub hi: f64,
    pub per_axis: usize,
}

impl ValueBins {
    pub fn new(k: usize, lo: f64, hi: f64, per_axis: usize) -> Result<Self> {
        if !(1..=3).contains(&k) || per_axis == 0 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidInput(format!("bad bins k={k}, [{lo}, {hi}], per_axis={per_axis}")));
        }
        Ok(Self { k, lo, hi, per_axis })
    }

    /// The box `[-4 bound, 4 bound]^k` for a field with sup norm `bound`.
    pub fn for_bound(k: usize, bound: f64, per_axis: usize) -> Result<Self> {
        Self::new(k, -4.0 * bound, 4.0 * bound, per_axis)
    }

    /// Number of regular bins, excluding overflow.
    pub fn len(&self) -> usize {
        self.per_axis.pow(self.k as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn overflow(&self) -> usize {
        self.len()
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.per_axis as f64
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.per_axis).map(|i| self.lo + i as f64 * self.width()).collect()
    }

    pub fn locate(&self, v: &[f64]) -> usize {
        let mut bin = 0;
        for &x in &v[..self.k] {
            if !(x >= self.lo && x <= self.hi) {
                return self.overflow();
            }
            let j = (((x - self.lo) / self.width()) as usize).min(self.per_axis - 1);
            bin = bin * self.per_axis + j;
        }
        bin
    }

    /// Centre of a regular bin; unused trailing coordinates are zero.
    pub fn center(&self, bin: usize) -> [f64; 3] {
        let mut out = [0.0; 3];
        let mut rest = bin;
        for a in (0..self.k).rev() {
            out[a] = self.lo + ((rest % self.per_axis) as f64 + 0.5) * self.width();
            rest /= self.per_axis;
        }
        out
    }
}

/// A value together with the overflow mass it ignored.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tagged<T> {
    pub value: T,
    pub overflow: f64,
    pub warning: bool,
}

impl<T> Tagged<T> {
    fn new(value: T, overflow: f64) -> Self {
        let warning = overflow > OVERFLOW_WARNING;
        if warning {
            log::warn!("overflow mass {overflow:.3e} exceeds {OVERFLOW_WARNING}");
        }
        Self { value, overflow, warning }
    }
}

/// Per-cell probability vectors over the bins, stored sparsely as sorted
/// `(bin, weight)` rows with strictly positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedYoungMeasure {
    cells: CellGrid,
    bins: ValueBins,
    rows: Vec<Vec<(usize, f64)>>,
}

impl GriddedYoungMeasure {
    /// Rows of `(bin, weight)` pairs, one per cell, each summing to one.
    /// Repeated bins are merged and zero weights dropped.
    pub fn from_rows(cells: CellGrid, bins: ValueBins, mut rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if rows.len() != cells.len() {
            return Err(Error::LengthMismatch { expected: cells.len(), got: rows.len() });
        }
        for (c, row) in rows.iter_mut().enumerate() {
            if row.iter().any(|&(b, w)| b > bins.overflow() || !(w >= 0.0) || !w.is_finite()) {
                return Err(Error::InvalidInput(format!("cell {c} has an invalid bin or weight")));
            }
            *row = merge_row(std::mem::take(row));
            let s: f64 = row.iter().map(|e| e.1).sum();
            if (s - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::InvalidInput(format!("cell {c} has mass {s}")));
            }
        }
        Ok(Self { cells, bins, rows })
    }

    /// Normalizes each row of a dense `cells x (bins + 1)` array of
    /// nonnegative weights.
    pub fn normalized(cells: CellGrid, bins: ValueBins, raw: Vec<f64>) -> Result<Self> {
        let stride = bins.len() + 1;
        if raw.len() != cells.len() * stride {
            return Err(Error::LengthMismatch { expected: cells.len() * stride, got: raw.len() });
        }
        let rows = raw
            .chunks(stride)
            .map(|row| row.iter().enumerate().filter(|e| *e.1 != 0.0).map(|(b, &w)| (b, w)).collect())
            .collect();
        Self::from_counts(cells, bins, rows)
    }

    fn from_counts(cells: CellGrid, bins: ValueBins, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let rows = rows
            .into_iter()
            .map(|row| {
                let s: f64 = row.iter().map(|e| e.1).sum();
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::InvalidInput("each cell needs positive finite mass".into()));
                }
                Ok(row.into_iter().map(|(b, w)| (b, w / s)).collect())
            })
            .collect::<Result<_>>()?;
        Self::from_rows(cells, bins, rows)
    }

    /// One-hot measure at `value(cell centre)` in every cell.
    pub fn dirac(cells: CellGrid, bins: ValueBins, value: impl Fn([f64; 3]) -> Vec<f64>) -> Result<Self> {
        let mut rows = Vec::with_capacity(cells.len());
        for c in 0..cells.len() {
            let v = value(cells.center(c));
            if v.len() != bins.k {
                return Err(Error::LengthMismatch { expected: bins.k, got: v.len() });
            }
            rows.push(vec![(bins.locate(&v), 1.0)]);
        }
        Ok(Self { cells, bins, rows })
    }

    pub fn cells(&self) -> &CellGrid {
        &self.cells
    }

    pub fn bins(&self) -> &ValueBins {
        &self.bins
    }

    /// Nonzero `(bin, weight)` entries of cell `c`, sorted by bin.
    pub fn cell(&self, c: usize) -> &[(usize, f64)] {
        &self.rows[c]
    }

    pub fn weight(&self, c: usize, bin: usize) -> f64 {
        let row = &self.rows[c];
        row.binary_search_by_key(&bin, |e| e.0).map(|i| row[i].1).unwrap_or(0.0)
    }

    /// Fraction of the total mass sitting in overflow bins.
    pub fn overflow_mass(&self) -> f64 {
        let o = self.bins.overflow();
        (0..self.cells.len()).map(|c| self.weight(c, o)).sum::<f64>() / self.cells.len() as f64
    }

    /// Integral of `g(x, b)` against the normalized measure, with the
    /// overflow mass weighted by `at_infinity`.
    pub fn expectation(&self, g: impl Fn([f64; 3], [f64; 3]) -> f64, at_infinity: f64) -> f64 {
        let o = self.bins.overflow();
        let mut total = 0.0;
        for (c, row) in self.rows.iter().enumerate() {
            let x = self.cells.center(c);
            for &(b, w) in row {
                total += if b == o { w * at_infinity } else { w * g(x, self.bins.center(b)) };
            }
        }
        total / self.cells.len() as f64
    }

    pub fn header(&self) -> MeasureHeader {
        MeasureHeader {
            schema: 1,
            cells: self.cells,
            cell_volume: self.cells.cell_volume(),
            bins: self.bins,
            bin_edges: self.bins.edges(),
            overflow_bin: self.bins.overflow(),
            overflow_mass: self.overflow_mass(),
        }
    }

    /// Long-format CSV of the nonzero weights.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# schema=1")?;
        writeln!(w, "cell_ix,bin_ix,weight")?;
        for (c, row) in self.rows.iter().enumerate() {
            for &(b, x) in row {
                writeln!(w, "{c},{b},{x:e}")?;
            }
        }
        Ok(())
    }
}

fn merge_row(mut row: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    row.sort_unstable_by_key(|e| e.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(row.len());
    for (b, w) in row {
        match out.last_mut() {
            Some(last) if last.0 == b => last.1 += w,
            _ => out.push((b, w)),
        }
    }
    out.retain(|e| e.1 > 0.0);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureHeader {
    pub schema: u32,
    pub cells: CellGrid,
    pub cell_volume: f64,
    pub bins: ValueBins,
    pub bin_edges: Vec<f64>,
    pub overflow_bin: usize,
    pub overflow_mass: f64,
}

pub fn empirical_measure(samples: &ValueSamples, cells: CellGrid, bins: ValueBins) -> Result<GriddedYoungMeasure> {
    if samples.dim() != cells.d || samples.value_dim() != bins.k {
        return Err(Error::InvalidInput(format!(
            "samples (d={}, k={}) do not match cells d={} and bins k={}",
            samples.dim(),
            samples.value_dim(),
            cells.d,
            bins.k
        )));
    }
    if samples.size() < cells.per_side {
        return Err(Error::Resolution(format!(
            "{} grid points per side cannot fill {} cells per side",
            samples.size(),
            cells.per_side
        )));
    }
    let mut hits: Vec<Vec<usize>> = vec![Vec::new(); cells.len()];
    for i in 0..samples.len() {
        let c = cells.cell_of_axes(samples.axis_indices(i), samples.size());
        hits[c].push(bins.locate(samples.value(i)));
    }
    let rows = hits.into_iter().map(|h| h.into_iter().map(|b| (b, 1.0)).collect()).collect();
    GriddedYoungMeasure::from_counts(cells, bins, rows)
}

/// Periodic Euclidean distance on the first `d` coordinates.
pub fn torus_distance(d: usize, x: [f64; 3], y: [f64; 3]) -> f64 {
    let mut s = 0.0;
    for a in 0..d {
        let r = (x[a] - y[a]).rem_euclid(2.0 * PI);
        let r = r.min(2.0 * PI - r);
        s += r * r;
    }
    s.sqrt()
}

/// Normalized value histogram over a ball in `T^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationMeasure {
    pub bins: ValueBins,
    pub weights: Vec<f64>,
    pub points: usize,
}

impl OccupationMeasure {
    pub fn overflow_mass(&self) -> f64 {
        self.weights[self.bins.overflow()]
    }

    /// Bin holding the largest weight.
    pub fn mode_bin(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = i;
            }
        }
        best
    }

    pub fn mean(&self) -> Tagged<[f64; 3]> {
        let mut m = [0.0; 3];
        for (b, &w) in self.weights[..self.bins.len()].iter().enumerate() {
            let c = self.bins.center(b);
            for a in 0..3 {
                m[a] += w * c[a];
            }
        }
        Tagged::new(m, self.overflow_mass())
    }
}

pub fn occupation_measure(
    samples: &ValueSamples,
    x0: [f64; 3],
    eps: f64,
    bins: ValueBins,
) -> Result<OccupationMeasure> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    if samples.value_dim() != bins.k {
        return Err(Error::InvalidInput("sample and bin dimensions differ".into()));
    }
    let mut weights = vec![0.0; bins.len() + 1];
    let mut points = 0;
    for i in 0..samples.len() {
        if torus_distance(samples.dim(), samples.point(i), x0) <= eps {
            weights[bins.locate(samples.value(i))] += 1.0;
            points += 1;
        }
    }
    if points < MIN_BALL_POINTS {
        return Err(Error::Resolution(format!(
            "ball of radius {eps} holds {points} grid points, need {MIN_BALL_POINTS}"
        )));
    }
    weights.iter_mut().for_each(|w| *w /= points as f64);
    Ok(OccupationMeasure { bins, weights, points })
}

/// `sum_cells psi(x_c) sum_bins phi(b) w vol_c`. Overflow mass is excluded
/// from the sum; see [`GriddedYoungMeasure::overflow_mass`].
pub fn pair(measure: &GriddedYoungMeasure, phi: impl Fn(&[f64]) -> f64, psi: impl Fn([f64; 3]) -> f64) -> f64 {
    let k = measure.bins.k;
    let o = measure.bins.overflow();
    let vol = measure.cells.cell_volume();
    let mut total = 0.0;
    for (c, row) in measure.rows.iter().enumerate() {
        let inner: f64 = row.iter().filter(|e| e.0 != o).map(|&(b, w)| w * phi(&measure.bins.center(b)[..k])).sum();
        total += psi(measure.cells.center(c)) * inner * vol;
    }
    total
}

/// Per-cell barycentre `int b mu(x, db)`, `k` numbers per cell.
pub fn mean_field(measure: &GriddedYoungMeasure) -> Tagged<Vec<Vec<f64>>> {
    let k = measure.bins.k;
    let o = measure.bins.overflow();
    let value = measure
        .rows
        .iter()
        .map(|row| {
            let mut m = vec![0.0; k];
            for &(b, w) in row.iter().filter(|e| e.0 != o) {
                let ctr = measure.bins.center(b);
                for a in 0..k {
                    m[a] += w * ctr[a];
                }
            }
            m
        })
        .collect();
    Tagged::new(value, measure.overflow_mass())
}

/// `sum_cells sum_bins |b|^2 w vol_c`.
pub fn second_moment(measure: &GriddedYoungMeasure) -> Tagged<f64> {
    let v = pair(measure, |b| b.iter().map(|x| x * x).sum(), |_| 1.0);
    Tagged::new(v, measure.overflow_mass())
}

/// Cell averages of the samples, `k` numbers per cell.
pub fn cell_average(samples: &ValueSamples, cells: CellGrid) -> Result<Vec<Vec<f64>>> {
    if samples.dim() != cells.d || samples.size() < cells.per_side {
        return Err(Error::InvalidInput("samples do not resolve the cell grid".into()));
    }
    let k = samples.value_dim();
    let mut sums = vec![vec![0.0; k]; cells.len()];
    let mut counts = vec![0usize; cells.len()];
    for i in 0..samples.len() {
        let c = cells.cell_of_axes(samples.axis_indices(i), samples.size());
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(samples.value(i)) {
            *s += v;
        }
    }
    for (s, n) in sums.iter_mut().zip(counts) {
        s.iter_mut().for_each(|x| *x /= n as f64);
    }
    Ok(sums)
}

/// `sign * clamp(max(a - s |z - z0|, c), -1, 1)` on `T^d x R^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConeFunction {
    pub x0: [f64; 3],
    pub b0: [f64; 3],
    pub height: f64,
    pub slope: f64,
    pub floor: f64,
    pub negated: bool,
}

impl ConeFunction {
    fn sign(&self) -> f64 {
        if self.negated {
            -1.0
        } else {
            1.0
        }
    }

    pub fn eval(&self, d: usize, k: usize, x: [f64; 3], b: [f64; 3]) -> f64 {
        let dx = torus_distance(d, x, self.x0);
        let db: f64 = (0..k).map(|a| (b[a] - self.b0[a]).powi(2)).sum();
        let r = (dx * dx + db).sqrt();
        self.sign() * (self.height - self.slope * r).max(self.floor).clamp(-1.0, 1.0)
    }

    /// Value far from the centre in `b`.
    pub fn at_infinity(&self) -> f64 {
        self.sign() * self.floor.clamp(-1.0, 1.0)
    }
}

const CONE_SHAPES: [(f64, f64, f64); 2] = [(1.0, 0.25, 0.0), (0.5, 0.5, -0.5)];
const HALTON_PRIMES: [u64; 6] = [2, 3, 5, 7, 11, 13];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Enumerated cone functions `g_1..g_N` over Halton points in
/// `[0, 2pi)^d x [-radius, radius]^k`.
///
/// Function `i` (zero-based) uses Halton point `i / 4 + 1`, shape
/// `CONE_SHAPES[(i / 2) % 2]` and is negated for odd `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureMetricFamily {
    d: usize,
    k: usize,
    funcs: Vec<ConeFunction>,
}

impl MeasureMetricFamily {
    pub fn new(d: usize, k: usize, radius: f64, len: usize) -> Result<Self> {
        if (d != 2 && d != 3) || !(1..=3).contains(&k) || len == 0 || !(radius > 0.0) {
            return Err(Error::InvalidInput(format!("bad family d={d}, k={k}, radius={radius}, len={len}")));
        }
        let funcs = (0..len)
            .map(|i| {
                let p = (i / 4 + 1) as u64;
                let mut x0 = [0.0; 3];
                let mut b0 = [0.0; 3];
                for a in 0..d {
                    x0[a] = 2.0 * PI * radical_inverse(p, HALTON_PRIMES[a]);
                }
                for a in 0..k {
                    b0[a] = radius * (2.0 * radical_inverse(p, HALTON_PRIMES[d + a]) - 1.0);
                }
                let (height, slope, floor) = CONE_SHAPES[(i / 2) % 2];
                ConeFunction { x0, b0, height, slope, floor, negated: i % 2 == 1 }
            })
            .collect();
        Ok(Self { d, k, funcs })
    }

    pub fn functions(&self) -> &[ConeFunction] {
        &self.funcs
    }

    pub fn len(&self) -> usize {
        self.funcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.funcs.is_empty()
    }

    /// Bound on the omitted terms `i > N` of the full series.
    pub fn tail_bound(&self) -> f64 {
        2f64.powi(1 - self.funcs.len() as i32)
    }

    /// `int g_i d mu` for every function in the family.
    pub fn integrals(&self, mu: &GriddedYoungMeasure) -> Result<Vec<f64>> {
        if mu.cells.d != self.d || mu.bins.k != self.k {
            return Err(Error::InvalidInput("measure dimensions do not match the family".into()));
        }
        Ok(self.funcs.iter().map(|g| mu.expectation(|x, b| g.eval(self.d, self.k, x, b), g.at_infinity())).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RhoDistance {
    pub value: f64,
    pub tail_bound: f64,
}

/// `sum_{i <= N} 2^-i |int g_i d(mu - nu)|` over the normalized measures.
pub fn rho_distance(
    mu: &GriddedYoungMeasure,
    nu: &GriddedYoungMeasure,
    family: &MeasureMetricFamily,
) -> Result<RhoDistance> {
    let a = family.integrals(mu)?;
    let b = family.integrals(nu)?;
    let mut w = 1.0;
    let mut value = 0.0;
    for (x, y) in a.iter().zip(&b) {
        w *= 0.5;
        value += w * (x - y).abs();
    }
    Ok(RhoDistance { value, tail_bound: family.tail_bound() })
}
