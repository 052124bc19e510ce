//! Five-source bootstrap over calibration, prior, company sampling,
//! correlation structure and label realization; company summaries,
//! confidence categories and portfolio aggregation.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, Calibration, DEFAULT_MIN_CLASS_COUNT};
use crate::error::{domain, Error, Result};
use crate::inference::{company_posteriors_cached, realize_headcount, PatternLikelihoodCache, Qmc};
use crate::numerics::orthant::DEFAULT_ACCURACY;
use crate::pattern::{AnnotationPattern, ValidationSet};
use crate::rng::{derive_seed, key_of, substream, Stream};
use crate::synthetic::{adjust_one, copula_generate, AggregateCounts, SyntheticConfig};

pub const DEFAULT_ITERATIONS: usize = 1000;
/// Reported percentiles (q10, q50, q90).
pub const QUANTILE_PERCENTS: [u64; 3] = [10, 50, 90];
const MAX_CONSECUTIVE_FAILURES: usize = 10;
const PREVALENCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrgType {
    ConsultingOrMl,
    NonMl,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SizeBand {
    #[serde(rename = "lt100")]
    Lt100,
    #[serde(rename = "100to1k")]
    From100To1k,
    #[serde(rename = "1kto10k")]
    From1kTo10k,
    #[serde(rename = "gte10k")]
    Gte10k,
    /// Applies to every size (the non-ML row).
    #[serde(rename = "all")]
    All,
    #[serde(rename = "unknown")]
    Unknown,
}

impl SizeBand {
    /// Band boundaries 100, 1 000 and 10 000 belong to the larger band.
    pub fn from_headcount(headcount: u64) -> Self {
        match headcount {
            0..=99 => SizeBand::Lt100,
            100..=999 => SizeBand::From100To1k,
            1000..=9999 => SizeBand::From1kTo10k,
            _ => SizeBand::Gte10k,
        }
    }
}

macro_rules! string_enum {
    ($ty:ty { $($variant:path => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($name => Ok($variant),)+
                    other => Err(Error::Config(format!(
                        "unknown {} `{other}` (expected one of: {})",
                        stringify!($ty),
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
    };
}

string_enum!(OrgType {
    OrgType::ConsultingOrMl => "consulting_or_ml",
    OrgType::NonMl => "non_ml",
    OrgType::Unknown => "unknown",
});

string_enum!(SizeBand {
    SizeBand::Lt100 => "lt100",
    SizeBand::From100To1k => "100to1k",
    SizeBand::From1kTo10k => "1kto10k",
    SizeBand::Gte10k => "gte10k",
    SizeBand::All => "all",
    SizeBand::Unknown => "unknown",
});

/// Beta(alpha, beta) prior on expert prevalence for one stratum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub org_type: OrgType,
    pub size_band: SizeBand,
    pub alpha: f64,
    pub beta: f64,
}

impl PriorSpec {
    pub fn new(org_type: OrgType, size_band: SizeBand, alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite() && beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!(
                "prior ({org_type}, {size_band}) needs positive finite alpha and beta, got ({alpha}, {beta})"
            )));
        }
        Ok(Self {
            org_type,
            size_band,
            alpha,
            beta,
        })
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    /// One prevalence draw, kept strictly inside (0, 1).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let dist = Beta::new(self.alpha, self.beta).expect("validated Beta parameters");
        dist.sample(rng).clamp(PREVALENCE_EPS, 1.0 - PREVALENCE_EPS)
    }
}

/// The six company-size-stratified priors.
pub fn default_priors() -> Vec<PriorSpec> {
    use OrgType::{ConsultingOrMl, NonMl};
    use SizeBand::{All, From100To1k, From1kTo10k, Gte10k, Lt100};
    [
        (ConsultingOrMl, Lt100, 2.4, 21.7),
        (ConsultingOrMl, From100To1k, 3.0, 57.0),
        (ConsultingOrMl, From1kTo10k, 1.6, 154.8),
        (ConsultingOrMl, Gte10k, 1.0, 999.0),
        (NonMl, All, 1.0, 9999.0),
        (OrgType::Unknown, SizeBand::Unknown, 1.6, 154.8),
    ]
    .into_iter()
    .map(|(o, s, a, b)| PriorSpec {
        org_type: o,
        size_band: s,
        alpha: a,
        beta: b,
    })
    .collect()
}

/// Pick the prior for a company.
///
/// Non-ML organizations use their all-sizes row; an unknown size band uses
/// the unknown-size row; every other organization uses the consulting row
/// of its band. Exact (org_type, size_band) matches win over these rules.
pub fn select_prior(priors: &[PriorSpec], org_type: OrgType, size_band: SizeBand) -> Result<PriorSpec> {
    let find = |o: OrgType, s: SizeBand| priors.iter().find(|p| p.org_type == o && p.size_band == s).copied();
    let fallback = match (org_type, size_band) {
        (OrgType::NonMl, _) => find(OrgType::NonMl, SizeBand::All),
        (_, SizeBand::Unknown | SizeBand::All) => find(OrgType::Unknown, SizeBand::Unknown),
        (_, band) => find(OrgType::ConsultingOrMl, band),
    };
    find(org_type, size_band)
        .or(fallback)
        .ok_or_else(|| Error::Config(format!("no prior configured for ({org_type}, {size_band})")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub iterations: usize,
    pub seed: u64,
    pub min_class_count: usize,
    /// Orthant-probability accuracy target.
    pub accuracy: f64,
    pub synthetic: SyntheticConfig,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            seed: 0,
            min_class_count: DEFAULT_MIN_CLASS_COUNT,
            accuracy: DEFAULT_ACCURACY,
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl BootstrapConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            synthetic: SyntheticConfig {
                copula_seed: derive_seed(seed, Stream::Copula, &[]),
                ..SyntheticConfig::default()
            },
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(domain("bootstrap needs at least one iteration"));
        }
        if !(self.accuracy > 0.0 && self.accuracy <= 0.1) {
            return Err(domain(format!("accuracy must lie in (0, 0.1], got {}", self.accuracy)));
        }
        self.synthetic.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    Probable,
    Possible,
    NonZero,
    NotDetected,
}

string_enum!(Category {
    Category::Probable => "Probable",
    Category::Possible => "Possible",
    Category::NonZero => "Non-zero",
    Category::NotDetected => "Not Detected",
});

pub fn classify(q10: u64, q50: u64, q90: u64) -> Result<Category> {
    if !(q10 <= q50 && q50 <= q90) {
        return Err(domain(format!("quantiles out of order: ({q10}, {q50}, {q90})")));
    }
    Ok(if q10 > 0 {
        Category::Probable
    } else if q50 > 0 {
        Category::Possible
    } else if q90 > 0 {
        Category::NonZero
    } else {
        Category::NotDetected
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Real,
    Synthetic,
    /// Portfolio rows combining real and synthetic companies.
    Mixed,
}

string_enum!(Method {
    Method::Real => "real",
    Method::Synthetic => "synthetic",
    Method::Mixed => "mixed",
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub company_id: String,
    pub n_employees: u64,
    pub mean: f64,
    pub q10: u64,
    pub q50: u64,
    pub q90: u64,
    pub category: Category,
    pub method: Method,
}

impl EstimateSummary {
    /// Median headcount as a percentage of the workforce.
    pub fn ml_pct_q50(&self) -> f64 {
        if self.n_employees == 0 {
            0.0
        } else {
            100.0 * self.q50 as f64 / self.n_employees as f64
        }
    }

    /// Supplement-style rendering, e.g. `9 (1 - 26)`.
    pub fn interval_label(&self) -> String {
        let marker = if self.method == Method::Synthetic { " *" } else { "" };
        format!("{} ({} - {}){marker}", self.q50, self.q10, self.q90)
    }
}

/// Nearest-rank percentile of sorted draws.
fn nearest_rank(sorted: &[u64], percent: u64) -> u64 {
    let n = sorted.len() as u64;
    let rank = (percent * n).div_ceil(100).max(1);
    sorted[(rank - 1) as usize]
}

/// Mean and nearest-rank (q10, q50, q90) of integer draws.
pub fn summarize_draws(draws: &[u64]) -> (f64, [u64; 3]) {
    if draws.is_empty() {
        return (0.0, [0; 3]);
    }
    let mut sorted = draws.to_vec();
    sorted.sort_unstable();
    let mean = draws.iter().map(|&d| d as f64).sum::<f64>() / draws.len() as f64;
    (mean, QUANTILE_PERCENTS.map(|p| nearest_rank(&sorted, p)))
}

fn summary(company_id: &str, n_employees: u64, draws: &[u64], method: Method) -> Result<EstimateSummary> {
    let (mean, [q10, q50, q90]) = summarize_draws(draws);
    Ok(EstimateSummary {
        company_id: company_id.to_string(),
        n_employees,
        mean,
        q10,
        q50,
        q90,
        category: classify(q10, q50, q90)?,
        method,
    })
}

pub const AGGREGATE_ID: &str = "AGGREGATE";

/// Iteration-aligned sum across companies, then summary of the sums.
/// `matrix[i][c]` is company `c`'s draw in iteration `i`.
pub fn aggregate_portfolio(matrix: &[Vec<u64>], n_employees: u64, method: Method) -> Result<EstimateSummary> {
    if let Some(first) = matrix.first() {
        if matrix.iter().any(|row| row.len() != first.len()) {
            return Err(domain("ragged draw matrix: iterations cover different company counts"));
        }
    }
    let sums: Vec<u64> = matrix.iter().map(|row| row.iter().sum()).collect();
    summary(AGGREGATE_ID, n_employees, &sums, method)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CompanySource {
    Employees(Vec<AnnotationPattern>),
    Aggregate(AggregateCounts),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompanyInput {
    pub company_id: String,
    pub source: CompanySource,
    pub prior: PriorSpec,
}

impl CompanyInput {
    pub fn n_employees(&self) -> u64 {
        match &self.source {
            CompanySource::Employees(e) => e.len() as u64,
            CompanySource::Aggregate(a) => a.total_headcount,
        }
    }

    pub fn method(&self) -> Method {
        match self.source {
            CompanySource::Employees(_) => Method::Real,
            CompanySource::Aggregate(_) => Method::Synthetic,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioRun {
    pub summaries: Vec<EstimateSummary>,
    /// `draws[i][c]`: headcount of company `c` in iteration `i`, after any
    /// synthetic adjustment.
    pub draws: Vec<Vec<u64>>,
    pub aggregate: EstimateSummary,
    /// Employees scored with the prior because they had no annotations,
    /// counted over the unresampled company data.
    pub all_missing: usize,
}

fn calibrate_iteration(validation: &ValidationSet, config: &BootstrapConfig, iteration: usize) -> Result<Calibration> {
    let mut last = None;
    for attempt in 0..MAX_CONSECUTIVE_FAILURES {
        let mut rng = substream(config.seed, Stream::Calibration, &[iteration as u64, attempt as u64]);
        match validation.resample(&mut rng).and_then(|v| calibrate(&v, config.min_class_count)) {
            Ok(c) => return Ok(c),
            Err(e @ (Error::Calibration { .. } | Error::DegenerateTable { .. } | Error::Domain(_))) => {
                log::debug!("iteration {iteration} attempt {attempt}: {e}");
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::BootstrapExhausted {
        iteration,
        attempts: MAX_CONSECUTIVE_FAILURES,
        last: Box::new(last.expect("at least one attempt ran")),
    })
}

fn run_iteration(
    companies: &[CompanyInput],
    validation: &ValidationSet,
    config: &BootstrapConfig,
    iteration: usize,
) -> Result<Vec<u64>> {
    let cal = calibrate_iteration(validation, config, iteration)?;
    let it = iteration as u64;
    let qmc = Qmc {
        seed: derive_seed(config.seed, Stream::Qmc, &[it]),
        accuracy: config.accuracy,
    };
    let mut cache = PatternLikelihoodCache::new(&cal.profiles, &cal.structure, qmc);
    companies
        .iter()
        .map(|c| {
            let key = key_of(&c.company_id);
            let prevalence = c.prior.sample(&mut substream(config.seed, Stream::Priors, &[it, key]));
            let (patterns, adjust) = match &c.source {
                CompanySource::Employees(employees) => {
                    let mut rng = substream(config.seed, Stream::Employees, &[it, key]);
                    let n = employees.len();
                    let sample: Vec<AnnotationPattern> =
                        (0..n).map(|_| employees[rng.gen_range(0..n)].clone()).collect();
                    (sample, None)
                }
                CompanySource::Aggregate(agg) => {
                    let mut rng = substream(config.synthetic.copula_seed, Stream::Copula, &[it, key]);
                    let n = agg.total_headcount as usize;
                    (copula_generate(agg, &cal.structure, n, &mut rng)?, Some(config.synthetic.adjustment))
                }
            };
            let post = company_posteriors_cached(&mut cache, &patterns, prevalence)?;
            let mut rng = substream(config.seed, Stream::Realization, &[it, key]);
            let draw = realize_headcount(&post.posteriors, &mut rng);
            Ok(adjust.map_or(draw, |a| adjust_one(draw, a)))
        })
        .collect()
}

/// Run the bootstrap for a set of companies sharing one validation set.
///
/// Each iteration recalibrates on its own validation resample; all
/// companies in that iteration share the resulting profiles, correlation
/// structure and likelihood cache. Iterations run in parallel and are
/// merged in order.
pub fn run_portfolio(
    companies: &[CompanyInput],
    validation: &ValidationSet,
    config: &BootstrapConfig,
) -> Result<PortfolioRun> {
    config.validate()?;
    let mut seen = HashSet::new();
    for c in companies {
        if !seen.insert(c.company_id.as_str()) {
            return Err(domain(format!("company `{}` appears twice", c.company_id)));
        }
        match &c.source {
            CompanySource::Employees(e) if e.is_empty() => {
                return Err(domain(format!("company `{}` has no employees", c.company_id)))
            }
            CompanySource::Employees(e) => {
                if let Some(bad) = e.iter().find(|p| p.len() != validation.panel().len()) {
                    return Err(domain(format!(
                        "company `{}`: pattern of length {} for a panel of {}",
                        c.company_id,
                        bad.len(),
                        validation.panel().len()
                    )));
                }
            }
            CompanySource::Aggregate(_) => {}
        }
    }

    let draws: Vec<Vec<u64>> = (0..config.iterations)
        .into_par_iter()
        .map(|i| run_iteration(companies, validation, config, i))
        .collect::<Result<_>>()?;

    let summaries = companies
        .iter()
        .enumerate()
        .map(|(c, input)| {
            let column: Vec<u64> = draws.iter().map(|row| row[c]).collect();
            summary(&input.company_id, input.n_employees(), &column, input.method())
        })
        .collect::<Result<Vec<_>>>()?;

    let methods: HashSet<Method> = companies.iter().map(CompanyInput::method).collect();
    let method = match (methods.contains(&Method::Real), methods.contains(&Method::Synthetic)) {
        (true, true) => Method::Mixed,
        (false, true) => Method::Synthetic,
        _ => Method::Real,
    };
    let total: u64 = companies.iter().map(CompanyInput::n_employees).sum();
    let aggregate = aggregate_portfolio(&draws, total, method)?;
    let all_missing = companies
        .iter()
        .map(|c| match &c.source {
            CompanySource::Employees(e) => e.iter().filter(|p| p.is_all_missing()).count(),
            CompanySource::Aggregate(_) => 0,
        })
        .sum();
    if all_missing > 0 {
        log::warn!("{all_missing} employee(s) had no annotations and were scored with the prior");
    }
    Ok(PortfolioRun {
        summaries,
        draws,
        aggregate,
        all_missing,
    })
}

/// Bootstrap summary for a single company.
pub fn run_company_estimate(
    company: CompanySource,
    company_id: &str,
    validation: &ValidationSet,
    prior: PriorSpec,
    config: &BootstrapConfig,
) -> Result<EstimateSummary> {
    let input = CompanyInput {
        company_id: company_id.to_string(),
        source: company,
        prior,
    };
    let mut run = run_portfolio(std::slice::from_ref(&input), validation, config)?;
    Ok(run.summaries.remove(0))
}
