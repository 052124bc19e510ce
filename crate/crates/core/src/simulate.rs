//! Ground-truth simulation: populations drawn from the same latent probit
//! model the estimator assumes, and a scoreboard comparing estimates with
//! the known truth.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{run_portfolio, BootstrapConfig, CompanyInput, CompanySource, EstimateSummary, OrgType, PortfolioRun, PriorSpec, SizeBand};
use crate::calibration::{calibrate, confusion_counts, AnnotatorProfile, CorrelationStructure};
use crate::error::{domain, Error, Result};
use crate::inference::{validation_posteriors, Qmc};
use crate::numerics::{cholesky_lower, CorrelationMatrix, LowerTriangular};
use crate::pattern::{Annotation, AnnotationPattern, Class, ValidationRecord, ValidationSet};
use crate::rng::{derive_seed, substream, Stream};
use crate::synthetic::threshold_latent;

/// Decision cut for the fused-vs-individual comparison.
pub const FUSED_CUT: f64 = 0.5;
/// Prior concentration used when a scenario gives no explicit prior.
const DEFAULT_PRIOR_STRENGTH: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatorSpec {
    pub id: String,
    pub sensitivity: f64,
    pub specificity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaSpec {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationScenario {
    pub seed: u64,
    pub n_companies: usize,
    /// Inclusive range of employees per company.
    pub employees_per_company: [u64; 2],
    pub true_prevalence: f64,
    #[serde(rename = "annotator")]
    pub annotators: Vec<AnnotatorSpec>,
    /// Equicorrelation for both classes; ignored for a class whose full
    /// matrix is given in `r_pos` / `r_neg`.
    pub latent_correlation: f64,
    pub r_pos: Option<Vec<Vec<f64>>>,
    pub r_neg: Option<Vec<Vec<f64>>>,
    pub validation_size: usize,
    pub validation_prevalence: f64,
    /// Estimation prior; defaults to a Beta centred on the true prevalence.
    pub prior: Option<BetaSpec>,
}

impl Default for SimulationScenario {
    fn default() -> Self {
        let a = |id: &str, sensitivity, specificity| AnnotatorSpec {
            id: id.to_string(),
            sensitivity,
            specificity,
        };
        Self {
            seed: 0,
            n_companies: 40,
            employees_per_company: [20, 200],
            true_prevalence: 0.05,
            annotators: vec![
                a("kw_title", 0.55, 0.97),
                a("kw_publications", 0.65, 0.93),
                a("kw_skills", 0.75, 0.88),
                a("llm_a", 0.80, 0.93),
                a("llm_b", 0.78, 0.95),
                a("llm_c", 0.85, 0.90),
            ],
            latent_correlation: 0.3,
            r_pos: None,
            r_neg: None,
            validation_size: 585,
            validation_prevalence: 153.0 / 585.0,
            prior: None,
        }
    }
}

fn field_error(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("scenario field `{field}`: {msg}"))
}

impl SimulationScenario {
    pub fn panel(&self) -> Vec<String> {
        self.annotators.iter().map(|a| a.id.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_companies == 0 {
            return Err(field_error("n_companies", "must be at least 1"));
        }
        let [lo, hi] = self.employees_per_company;
        if lo == 0 || lo > hi {
            return Err(field_error("employees_per_company", format!("need 1 <= min <= max, got [{lo}, {hi}]")));
        }
        if !(0.0..1.0).contains(&self.true_prevalence) {
            return Err(field_error("true_prevalence", format!("must lie in [0, 1), got {}", self.true_prevalence)));
        }
        if self.annotators.is_empty() {
            return Err(field_error("annotator", "at least one annotator is required"));
        }
        if !(self.validation_prevalence > 0.0 && self.validation_prevalence < 1.0) {
            return Err(field_error(
                "validation_prevalence",
                format!("must lie in (0, 1), got {}", self.validation_prevalence),
            ));
        }
        let experts = self.validation_experts();
        if experts == 0 || experts == self.validation_size {
            return Err(field_error("validation_size", "too small to contain both classes"));
        }
        if let Some(p) = self.prior {
            PriorSpec::new(OrgType::Unknown, SizeBand::Unknown, p.alpha, p.beta).map_err(|e| field_error("prior", e))?;
        }
        self.profiles()?;
        self.structure()?;
        Ok(())
    }

    fn validation_experts(&self) -> usize {
        (self.validation_size as f64 * self.validation_prevalence).round() as usize
    }

    pub fn profiles(&self) -> Result<Vec<AnnotatorProfile>> {
        self.annotators
            .iter()
            .map(|a| AnnotatorProfile::new(&a.id, a.sensitivity, a.specificity).map_err(|e| field_error("annotator", e)))
            .collect()
    }

    pub fn structure(&self) -> Result<CorrelationStructure> {
        let n = self.annotators.len();
        let build = |field: &str, rows: &Option<Vec<Vec<f64>>>| -> Result<CorrelationMatrix> {
            let m = match rows {
                Some(r) => CorrelationMatrix::from_rows(r),
                None => CorrelationMatrix::equicorrelated(n, self.latent_correlation),
            }
            .map_err(|e| field_error(field, e))?;
            if m.dim() != n {
                return Err(field_error(field, format!("{}x{} matrix for {n} annotators", m.dim(), m.dim())));
            }
            cholesky_lower(&m).map_err(|e| field_error(field, e))?;
            Ok(m)
        };
        let field = |given: &Option<Vec<Vec<f64>>>, name| if given.is_some() { name } else { "latent_correlation" };
        Ok(CorrelationStructure {
            panel: self.panel(),
            r_pos: build(field(&self.r_pos, "r_pos"), &self.r_pos)?,
            r_neg: build(field(&self.r_neg, "r_neg"), &self.r_neg)?,
        })
    }

    /// Prior used when estimating the simulated companies.
    pub fn estimation_prior(&self) -> PriorSpec {
        let (alpha, beta) = match self.prior {
            Some(p) => (p.alpha, p.beta),
            None if self.true_prevalence > 0.0 => (
                DEFAULT_PRIOR_STRENGTH * self.true_prevalence,
                DEFAULT_PRIOR_STRENGTH * (1.0 - self.true_prevalence),
            ),
            None => (1.0, 9999.0),
        };
        PriorSpec {
            org_type: OrgType::Unknown,
            size_band: SizeBand::Unknown,
            alpha,
            beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCompany {
    pub company_id: String,
    pub patterns: Vec<AnnotationPattern>,
    pub labels: Vec<Class>,
}

impl SimulatedCompany {
    pub fn true_count(&self) -> u64 {
        self.labels.iter().filter(|c| c.is_expert()).count() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub validation: ValidationSet,
    pub companies: Vec<SimulatedCompany>,
}

struct Generator {
    profiles: Vec<AnnotatorProfile>,
    chol_pos: LowerTriangular,
    chol_neg: LowerTriangular,
}

impl Generator {
    fn pattern<R: Rng + ?Sized>(&self, class: Class, rng: &mut R, z: &mut [f64]) -> AnnotationPattern {
        let cuts: Vec<f64> = self.profiles.iter().map(|p| p.threshold(class)).collect();
        let chol = if class.is_expert() { &self.chol_pos } else { &self.chol_neg };
        AnnotationPattern(threshold_latent(chol, &cuts, rng, z).into_iter().map(Annotation::from_bool).collect())
    }
}

/// Draw a validation set and the company employee populations.
pub fn generate_population(scenario: &SimulationScenario) -> Result<Population> {
    scenario.validate()?;
    let structure = scenario.structure()?;
    let gen = Generator {
        profiles: scenario.profiles()?,
        chol_pos: cholesky_lower(&structure.r_pos)?,
        chol_neg: cholesky_lower(&structure.r_neg)?,
    };
    let n = gen.profiles.len();

    let mut rng = substream(scenario.seed, Stream::Simulation, &[0]);
    let experts = scenario.validation_experts();
    let mut gold: Vec<Class> = (0..scenario.validation_size).map(|i| Class::from_indicator(i < experts)).collect();
    gold.shuffle(&mut rng);
    let mut z = vec![0.0; n];
    let records = gold
        .into_iter()
        .enumerate()
        .map(|(i, g)| ValidationRecord {
            record_id: format!("v{:05}", i + 1),
            gold: g,
            annotations: gen.pattern(g, &mut rng, &mut z),
        })
        .collect();
    let validation = ValidationSet::new(scenario.panel(), records)?;

    let [lo, hi] = scenario.employees_per_company;
    let companies = (0..scenario.n_companies)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(scenario.seed, Stream::Simulation, &[1, c as u64]);
            let size = rng.gen_range(lo..=hi) as usize;
            let mut z = vec![0.0; n];
            let labels: Vec<Class> = (0..size)
                .map(|_| Class::from_indicator(rng.gen::<f64>() < scenario.true_prevalence))
                .collect();
            let patterns = labels.iter().map(|&l| gen.pattern(l, &mut rng, &mut z)).collect();
            SimulatedCompany {
                company_id: format!("sim-{:03}", c + 1),
                patterns,
                labels,
            }
        })
        .collect();
    Ok(Population { validation, companies })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub company_id: String,
    pub n_employees: u64,
    pub truth: u64,
    pub q10: u64,
    pub q50: u64,
    pub q90: u64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyComparison {
    pub fused_accuracy: f64,
    /// (annotator id, accuracy) in panel order.
    pub individual: Vec<(String, f64)>,
}

impl AccuracyComparison {
    pub fn fused_beats_all(&self) -> bool {
        self.individual.iter().all(|(_, a)| self.fused_accuracy >= *a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scoreboard {
    pub rows: Vec<ScoreRow>,
    pub coverage: f64,
    pub median_abs_error: f64,
    pub accuracy: AccuracyComparison,
}

/// Fused posterior accuracy at [`FUSED_CUT`] against each annotator alone,
/// scored on the validation set at its own gold prevalence.
pub fn compare_accuracy(validation: &ValidationSet, min_class_count: usize, qmc: Qmc) -> Result<AccuracyComparison> {
    let cal = calibrate(validation, min_class_count)?;
    let prevalence = validation.class_count(Class::Expert) as f64 / validation.len() as f64;
    let posteriors = validation_posteriors(validation, &cal.profiles, &cal.structure, prevalence, qmc)?;
    let fused = crate::calibration::fused_confusion(validation, &posteriors, FUSED_CUT)?;
    let individual = validation
        .panel()
        .iter()
        .map(|id| Ok((id.clone(), confusion_counts(validation, id)?.report()?.accuracy)))
        .collect::<Result<_>>()?;
    Ok(AccuracyComparison {
        fused_accuracy: fused.accuracy,
        individual,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Coverage and error of `estimates` against the population's truth.
pub fn scoreboard(population: &Population, estimates: &[EstimateSummary], accuracy: AccuracyComparison) -> Result<Scoreboard> {
    if population.companies.is_empty() || estimates.is_empty() {
        return Err(domain("scoreboard needs at least one company"));
    }
    if population.companies.len() != estimates.len() {
        return Err(domain(format!(
            "{} estimates for {} simulated companies",
            estimates.len(),
            population.companies.len()
        )));
    }
    let rows: Vec<ScoreRow> = population
        .companies
        .iter()
        .zip(estimates)
        .map(|(c, e)| {
            if c.company_id != e.company_id {
                return Err(domain(format!("estimate `{}` is aligned with company `{}`", e.company_id, c.company_id)));
            }
            let truth = c.true_count();
            Ok(ScoreRow {
                company_id: c.company_id.clone(),
                n_employees: c.labels.len() as u64,
                truth,
                q10: e.q10,
                q50: e.q50,
                q90: e.q90,
                covered: e.q10 <= truth && truth <= e.q90,
            })
        })
        .collect::<Result<_>>()?;
    let coverage = rows.iter().filter(|r| r.covered).count() as f64 / rows.len() as f64;
    let median_abs_error = median(rows.iter().map(|r| r.q50.abs_diff(r.truth) as f64).collect());
    Ok(Scoreboard {
        rows,
        coverage,
        median_abs_error,
        accuracy,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutcome {
    pub population: Population,
    pub run: PortfolioRun,
    pub scoreboard: Scoreboard,
}

/// Generate, estimate and score one scenario.
pub fn run_simulation(scenario: &SimulationScenario, config: &BootstrapConfig) -> Result<SimulationOutcome> {
    let population = generate_population(scenario)?;
    let prior = scenario.estimation_prior();
    let inputs: Vec<CompanyInput> = population
        .companies
        .iter()
        .map(|c| CompanyInput {
            company_id: c.company_id.clone(),
            source: CompanySource::Employees(c.patterns.clone()),
            prior,
        })
        .collect();
    let run = run_portfolio(&inputs, &population.validation, config)?;
    let qmc = Qmc::new(derive_seed(config.seed, Stream::Qmc, &[u64::MAX])).with_accuracy(config.accuracy);
    let accuracy = compare_accuracy(&population.validation, config.min_class_count, qmc)?;
    let scoreboard = scoreboard(&population, &run.summaries, accuracy)?;
    Ok(SimulationOutcome {
        population,
        run,
        scoreboard,
    })
}
