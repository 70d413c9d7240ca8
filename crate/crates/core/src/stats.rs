//! Sample means with standard errors.

use serde::Serialize;

use crate::error::{Error, Result};

/// Monte Carlo estimate of a mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    /// Standard error of the mean (zero for a single sample).
    pub stderr: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        let mut acc = Accumulator::default();
        xs.iter().for_each(|&x| acc.push(x));
        acc.estimate()
    }

    /// Whether `target` lies within `z` standard errors of the mean.
    pub fn covers(&self, target: f64, z: f64) -> bool {
        (self.mean - target).abs() <= z * self.stderr
    }

    /// Lower end of the `z`-sigma interval.
    pub fn lower(&self, z: f64) -> f64 {
        self.mean - z * self.stderr
    }

    pub fn upper(&self, z: f64) -> f64 {
        self.mean + z * self.stderr
    }
}

/// Streaming mean/variance (Welford).
#[derive(Debug, Clone, Copy, Default)]
pub struct Accumulator {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn estimate(&self) -> Result<Estimate> {
        if self.n == 0 {
            return Err(Error::EmptyEnsemble);
        }
        Ok(Estimate { mean: self.mean, stderr: (self.variance() / self.n as f64).sqrt(), samples: self.n })
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch { expected: xs.len(), got: ys.len() });
    }
    if xs.len() < 2 {
        return Err(Error::InvalidInput("slope fit needs at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("slope fit with identical abscissae".into()));
    }
    Ok(sxy / sxx)
}
