//! Synthetic employee-level annotations for companies where only
//! aggregate keyword-filter counts are known.
//!
//! Latent vectors are drawn from N(0, R) with R the non-expert correlation
//! matrix restricted to the available filters; filter f is positive iff its
//! coordinate exceeds Φ⁻¹(1 − p_f), so each column matches the company
//! prevalence p_f = count_f / headcount.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::calibration::CorrelationStructure;
use crate::error::{domain, Result};
use crate::numerics::{cholesky_lower, std_normal_quantile, LowerTriangular};
use crate::pattern::{Annotation, AnnotationPattern};

pub const DEFAULT_ADJUSTMENT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateCounts {
    pub company_id: String,
    pub total_headcount: u64,
    /// Keyword-filter id to number of matching profiles.
    pub filter_counts: BTreeMap<String, u64>,
}

impl AggregateCounts {
    pub fn new(company_id: impl Into<String>, total_headcount: u64, filter_counts: BTreeMap<String, u64>) -> Result<Self> {
        let company_id = company_id.into();
        if total_headcount == 0 {
            return Err(domain(format!("company `{company_id}` has zero total headcount")));
        }
        if filter_counts.is_empty() {
            return Err(domain(format!("company `{company_id}` has no filter counts")));
        }
        Ok(Self {
            company_id,
            total_headcount,
            filter_counts,
        })
    }

    /// Per-filter prevalence, clamped to 1 when a count exceeds the headcount.
    pub fn prevalences(&self) -> BTreeMap<&str, f64> {
        self.filter_counts
            .iter()
            .map(|(id, &count)| {
                let mut p = count as f64 / self.total_headcount as f64;
                if p > 1.0 {
                    log::warn!(
                        "company `{}`: filter `{id}` count {count} exceeds headcount {}; prevalence clamped to 1",
                        self.company_id,
                        self.total_headcount
                    );
                    p = 1.0;
                }
                (id.as_str(), p)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub adjustment: f64,
    pub copula_seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            adjustment: DEFAULT_ADJUSTMENT,
            copula_seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.adjustment > 0.0 && self.adjustment <= 1.0 {
            Ok(())
        } else {
            Err(domain(format!("adjustment must lie in (0, 1], got {}", self.adjustment)))
        }
    }
}

/// Draw one latent vector L·z and compare against per-coordinate cut points.
pub(crate) fn threshold_latent<R: Rng + ?Sized>(chol: &LowerTriangular, cuts: &[f64], rng: &mut R, z: &mut [f64]) -> Vec<bool> {
    let n = chol.dim;
    for v in z.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    (0..n)
        .map(|i| {
            let x: f64 = (0..=i).map(|k| chol.get(i, k) * z[k]).sum();
            x > cuts[i]
        })
        .collect()
}

/// Generate `n` synthetic employee patterns over the structure's panel.
/// Annotators without an aggregate count are marked missing.
pub fn copula_generate<R: Rng + ?Sized>(
    agg: &AggregateCounts,
    structure: &CorrelationStructure,
    n: usize,
    rng: &mut R,
) -> Result<Vec<AnnotationPattern>> {
    let prevalences = agg.prevalences();
    let mut idx = Vec::with_capacity(prevalences.len());
    let mut cuts = Vec::with_capacity(prevalences.len());
    for (id, p) in &prevalences {
        let i = structure.panel.iter().position(|a| a == id).ok_or_else(|| {
            domain(format!("company `{}`: filter `{id}` is not in the annotator panel", agg.company_id))
        })?;
        idx.push(i);
        cuts.push(match *p {
            p if p <= 0.0 => f64::INFINITY,
            p if p >= 1.0 => f64::NEG_INFINITY,
            p => std_normal_quantile(1.0 - p)?,
        });
    }
    let corr = structure.r_neg.restrict(&idx).clamped();
    let chol = cholesky_lower(&corr)?;
    let panel_len = structure.panel.len();
    let mut z = vec![0.0; idx.len()];
    Ok((0..n)
        .map(|_| {
            let bits = threshold_latent(&chol, &cuts, rng, &mut z);
            let mut pattern = vec![Annotation::Missing; panel_len];
            for (&i, b) in idx.iter().zip(bits) {
                pattern[i] = Annotation::from_bool(b);
            }
            AnnotationPattern(pattern)
        })
        .collect())
}

/// Scale headcount draws by the adjustment factor, rounding half up.
pub fn adjust_headcount_draws(draws: &[u64], config: &SyntheticConfig) -> Vec<u64> {
    draws.iter().map(|&d| adjust_one(d, config.adjustment)).collect()
}

#[inline]
pub(crate) fn adjust_one(draw: u64, adjustment: f64) -> u64 {
    (draw as f64 * adjustment + 0.5).floor() as u64
}
