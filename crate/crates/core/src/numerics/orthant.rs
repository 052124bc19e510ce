//! Multivariate normal orthant probabilities.
//!
//! Separation-of-variables transform with Genz–Bretz variable reordering,
//! integrated by a randomly shifted Richtmyer lattice rule (baker's
//! transform). The shifts come from a seeded ChaCha stream, so a fixed
//! seed always gives the same estimate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bvn::bvn_cdf;
use super::linalg::CorrelationMatrix;
use super::normal::{quantile_fast, std_normal_cdf, std_normal_pdf, std_normal_sf};
use crate::error::{domain, Error, Result};

pub const MAX_DIM: usize = 16;
pub const DEFAULT_ACCURACY: f64 = 1e-3;

const SHIFTS: usize = 10;
const MIN_POINTS: usize = 128;
const MAX_POINTS: usize = 1 << 15;
/// Stopping uses this many standard errors of the shift means.
const ERROR_FACTOR: f64 = 3.0;
const PRIMES: [u32; MAX_DIM] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    /// Coordinate exceeds its threshold.
    Above,
    /// Coordinate is at or below its threshold.
    Below,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthantSpec {
    pub thresholds: Vec<f64>,
    pub sides: Vec<Side>,
    pub accuracy: f64,
}

impl OrthantSpec {
    pub fn new(thresholds: Vec<f64>, sides: Vec<Side>) -> Self {
        Self {
            thresholds,
            sides,
            accuracy: DEFAULT_ACCURACY,
        }
    }

    pub fn with_accuracy(mut self, accuracy: f64) -> Self {
        self.accuracy = accuracy;
        self
    }

    fn limits(&self, i: usize) -> (f64, f64) {
        match self.sides[i] {
            Side::Above => (self.thresholds[i], f64::INFINITY),
            Side::Below => (f64::NEG_INFINITY, self.thresholds[i]),
        }
    }

    fn marginal(&self, i: usize) -> f64 {
        match self.sides[i] {
            Side::Above => std_normal_sf(self.thresholds[i]),
            Side::Below => std_normal_cdf(self.thresholds[i]),
        }
    }
}

/// Estimate plus the error bound (ERROR_FACTOR standard errors) reached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthantEstimate {
    pub value: f64,
    pub error: f64,
    pub points: usize,
}

/// Probability of the signed orthant described by `spec` under N(0, corr).
pub fn mvn_orthant_prob(spec: &OrthantSpec, corr: &CorrelationMatrix, seed: u64) -> Result<f64> {
    mvn_orthant_estimate(spec, corr, seed).map(|e| e.value)
}

pub fn mvn_orthant_estimate(
    spec: &OrthantSpec,
    corr: &CorrelationMatrix,
    seed: u64,
) -> Result<OrthantEstimate> {
    let n = spec.thresholds.len();
    if spec.sides.len() != n || corr.dim() != n {
        return Err(domain(format!(
            "orthant dimension mismatch: {} thresholds, {} sides, {}x{} correlation",
            n,
            spec.sides.len(),
            corr.dim(),
            corr.dim()
        )));
    }
    if n == 0 {
        return Err(domain("orthant probability needs at least one dimension"));
    }
    if n > MAX_DIM {
        return Err(domain(format!("dimension {n} exceeds the supported maximum {MAX_DIM}")));
    }
    if spec.thresholds.iter().any(|t| t.is_nan() || t.is_infinite()) {
        return Err(domain("orthant thresholds must be finite"));
    }
    if spec.accuracy.is_nan() || spec.accuracy <= 0.0 {
        return Err(domain("orthant accuracy must be positive"));
    }

    let exact = |value: f64| OrthantEstimate {
        value,
        error: 0.0,
        points: 0,
    };
    let corr = corr.clamped();
    if n == 1 {
        return Ok(exact(spec.marginal(0)));
    }
    if corr.is_identity() {
        return Ok(exact((0..n).map(|i| spec.marginal(i)).product()));
    }
    if n == 2 {
        // Flip "above" coordinates so both become lower-orthant conditions.
        let (mut h, mut k, mut rho) = (spec.thresholds[0], spec.thresholds[1], corr.get(0, 1));
        if spec.sides[0] == Side::Above {
            h = -h;
            rho = -rho;
        }
        if spec.sides[1] == Side::Above {
            k = -k;
            rho = -rho;
        }
        return Ok(exact(bvn_cdf(h, k, rho)));
    }

    let plan = Plan::build(spec, &corr)?;
    Ok(plan.integrate(spec.accuracy, seed))
}

/// Reordered Cholesky factor and scaled limits ready for integration.
struct Plan {
    dim: usize,
    chol: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Plan {
    fn build(spec: &OrthantSpec, corr: &CorrelationMatrix) -> Result<Self> {
        let n = spec.thresholds.len();
        let mut cov: Vec<f64> = (0..n * n).map(|idx| corr.get(idx / n, idx % n)).collect();
        let (mut lower, mut upper): (Vec<f64>, Vec<f64>) = (0..n).map(|i| spec.limits(i)).unzip();
        let mut chol = vec![0.0; n * n];
        let mut y = vec![0.0; n];
        let mut perm: Vec<usize> = (0..n).collect();

        for i in 0..n {
            // Pick the remaining variable with the smallest conditional
            // probability mass.
            let mut best = i;
            let mut best_mass = f64::INFINITY;
            for j in i..n {
                let shift: f64 = (0..i).map(|k| chol[j * n + k] * y[k]).sum();
                let var = cov[j * n + j] - (0..i).map(|k| chol[j * n + k].powi(2)).sum::<f64>();
                if var <= 1e-14 {
                    continue;
                }
                let sd = var.sqrt();
                let mass = std_normal_cdf((upper[j] - shift) / sd) - std_normal_cdf((lower[j] - shift) / sd);
                if mass < best_mass {
                    best_mass = mass;
                    best = j;
                }
            }
            if best != i {
                perm.swap(i, best);
                lower.swap(i, best);
                upper.swap(i, best);
                for k in 0..n {
                    cov.swap(i * n + k, best * n + k);
                }
                for k in 0..n {
                    cov.swap(k * n + i, k * n + best);
                }
                for k in 0..i {
                    chol.swap(i * n + k, best * n + k);
                }
            }
            let pivot = cov[i * n + i] - (0..i).map(|k| chol[i * n + k].powi(2)).sum::<f64>();
            if pivot <= 1e-14 {
                return Err(Error::NotPositiveDefinite {
                    pivot: perm[i],
                    value: pivot,
                });
            }
            let d = pivot.sqrt();
            chol[i * n + i] = d;
            for j in i + 1..n {
                let s: f64 = (0..i).map(|k| chol[j * n + k] * chol[i * n + k]).sum();
                chol[j * n + i] = (cov[j * n + i] - s) / d;
            }
            let shift: f64 = (0..i).map(|k| chol[i * n + k] * y[k]).sum();
            let a = (lower[i] - shift) / d;
            let b = (upper[i] - shift) / d;
            y[i] = truncated_mean(a, b);
        }
        Ok(Self {
            dim: n,
            chol,
            lower,
            upper,
        })
    }

    /// Integrand at a point `w` of the unit cube (first dim − 1 coordinates used).
    fn integrand(&self, w: &[f64], y: &mut [f64]) -> f64 {
        let n = self.dim;
        let d0 = self.chol[0];
        let mut lo = std_normal_cdf(self.lower[0] / d0);
        let mut hi = std_normal_cdf(self.upper[0] / d0);
        let mut f = hi - lo;
        for i in 1..n {
            if f <= 0.0 {
                return 0.0;
            }
            let u = (lo + w[i - 1] * (hi - lo)).clamp(1e-300, 1.0 - 1e-16);
            y[i - 1] = quantile_fast(u);
            let shift: f64 = (0..i).map(|k| self.chol[i * n + k] * y[k]).sum();
            let d = self.chol[i * n + i];
            lo = std_normal_cdf((self.lower[i] - shift) / d);
            hi = std_normal_cdf((self.upper[i] - shift) / d);
            f *= hi - lo;
        }
        f
    }

    fn integrate(&self, accuracy: f64, seed: u64) -> OrthantEstimate {
        let m = self.dim - 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shifts: Vec<Vec<f64>> = (0..SHIFTS).map(|_| (0..m).map(|_| rng.gen::<f64>()).collect()).collect();
        let gen: Vec<f64> = PRIMES[..m].iter().map(|&p| f64::from(p).sqrt().fract()).collect();

        let mut sums = [0.0; SHIFTS];
        let mut done = 0usize;
        let mut target = MIN_POINTS;
        let mut w = vec![0.0; m];
        let mut y = vec![0.0; self.dim];
        loop {
            for (shift, sum) in shifts.iter().zip(sums.iter_mut()) {
                for k in done + 1..=target {
                    for j in 0..m {
                        let x = (k as f64 * gen[j] + shift[j]).fract();
                        w[j] = (2.0 * x - 1.0).abs();
                    }
                    *sum += self.integrand(&w, &mut y);
                }
            }
            done = target;
            let means: Vec<f64> = sums.iter().map(|s| s / done as f64).collect();
            let value = means.iter().sum::<f64>() / SHIFTS as f64;
            let var = means.iter().map(|x| (x - value).powi(2)).sum::<f64>() / (SHIFTS * (SHIFTS - 1)) as f64;
            let error = ERROR_FACTOR * var.sqrt();
            if error <= accuracy || done >= MAX_POINTS {
                return OrthantEstimate {
                    value: value.clamp(0.0, 1.0),
                    error,
                    points: done * SHIFTS,
                };
            }
            target *= 2;
        }
    }
}

fn truncated_mean(a: f64, b: f64) -> f64 {
    let mass = std_normal_cdf(b) - std_normal_cdf(a);
    let pa = if a.is_finite() { std_normal_pdf(a) } else { 0.0 };
    let pb = if b.is_finite() { std_normal_pdf(b) } else { 0.0 };
    if mass > 1e-300 {
        (pa - pb) / mass
    } else if a.is_finite() && b.is_finite() {
        0.5 * (a + b)
    } else if a.is_finite() {
        a
    } else {
        b
    }
}
