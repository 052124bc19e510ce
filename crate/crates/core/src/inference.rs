//! Posterior probability of expertise from an annotation pattern, and
//! headcount realization.
//!
//! Each annotator's binary output is a thresholded latent Gaussian score;
//! the scores are jointly normal with a class-conditional correlation
//! matrix. The likelihood of a pattern under a class is therefore an
//! orthant probability. Missing annotators are dropped from the orthant,
//! which is exact marginalization under the latent normal model.

use std::collections::HashMap;

use rand::Rng;

use crate::calibration::{AnnotatorProfile, CorrelationStructure};
use crate::error::{domain, Result};
use crate::numerics::{mvn_orthant_prob, OrthantSpec, Side};
use crate::numerics::orthant::DEFAULT_ACCURACY;
use crate::pattern::{Annotation, AnnotationPattern, Class, ValidationSet};

pub use crate::numerics::orthant::DEFAULT_ACCURACY as DEFAULT_QMC_ACCURACY;

const LIKELIHOOD_FLOOR: f64 = 1e-300;

/// Seed and target accuracy for orthant integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Qmc {
    pub seed: u64,
    pub accuracy: f64,
}

impl Qmc {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            accuracy: DEFAULT_ACCURACY,
        }
    }

    pub fn with_accuracy(mut self, accuracy: f64) -> Self {
        self.accuracy = accuracy;
        self
    }
}

fn check_alignment(pattern: &AnnotationPattern, profiles: &[AnnotatorProfile], structure: &CorrelationStructure) -> Result<()> {
    let n = structure.panel.len();
    if pattern.len() != n || profiles.len() != n {
        return Err(domain(format!(
            "panel misalignment: pattern has {}, profiles {}, structure {} annotators",
            pattern.len(),
            profiles.len(),
            n
        )));
    }
    if let Some((p, id)) = profiles.iter().zip(&structure.panel).find(|(p, id)| &p.annotator_id != *id) {
        return Err(domain(format!(
            "profile `{}` does not match panel annotator `{id}`",
            p.annotator_id
        )));
    }
    Ok(())
}

/// P(pattern | class) under the correlated probit model.
pub fn pattern_likelihood(
    pattern: &AnnotationPattern,
    class: Class,
    profiles: &[AnnotatorProfile],
    structure: &CorrelationStructure,
    qmc: Qmc,
) -> Result<f64> {
    check_alignment(pattern, profiles, structure)?;
    let observed: Vec<usize> = (0..pattern.len()).filter(|&i| !pattern.get(i).is_missing()).collect();
    if observed.is_empty() {
        return Err(domain("cannot score an all-missing annotation pattern"));
    }
    let thresholds = observed.iter().map(|&i| profiles[i].threshold(class)).collect();
    let sides = observed
        .iter()
        .map(|&i| match pattern.get(i) {
            Annotation::Positive => Side::Above,
            _ => Side::Below,
        })
        .collect();
    let spec = OrthantSpec::new(thresholds, sides).with_accuracy(qmc.accuracy);
    let corr = structure.matrix(class).restrict(&observed);
    mvn_orthant_prob(&spec, &corr, qmc.seed)
}

/// Bayes' rule with both likelihoods floored at 1e-300.
pub fn posterior_from_likelihoods(prevalence: f64, l_expert: f64, l_non_expert: f64) -> f64 {
    let l1 = l_expert.max(LIKELIHOOD_FLOOR);
    let l0 = l_non_expert.max(LIKELIHOOD_FLOOR);
    let num = prevalence * l1;
    num / (num + (1.0 - prevalence) * l0)
}

fn check_prevalence(prevalence: f64) -> Result<()> {
    if prevalence > 0.0 && prevalence < 1.0 {
        Ok(())
    } else {
        Err(domain(format!("prevalence must lie in (0, 1), got {prevalence}")))
    }
}

pub fn posterior_prob(
    pattern: &AnnotationPattern,
    prevalence: f64,
    profiles: &[AnnotatorProfile],
    structure: &CorrelationStructure,
    qmc: Qmc,
) -> Result<f64> {
    check_prevalence(prevalence)?;
    let l1 = pattern_likelihood(pattern, Class::Expert, profiles, structure, qmc)?;
    let l0 = pattern_likelihood(pattern, Class::NonExpert, profiles, structure, qmc)?;
    Ok(posterior_from_likelihoods(prevalence, l1, l0))
}

/// Memoized pattern likelihoods for one (profiles, structure, seed)
/// generation, keyed by availability mask, sign mask and class.
#[derive(Debug)]
pub struct PatternLikelihoodCache<'a> {
    profiles: &'a [AnnotatorProfile],
    structure: &'a CorrelationStructure,
    qmc: Qmc,
    map: HashMap<(u32, u32, Class), f64>,
}

impl<'a> PatternLikelihoodCache<'a> {
    pub fn new(profiles: &'a [AnnotatorProfile], structure: &'a CorrelationStructure, qmc: Qmc) -> Self {
        Self {
            profiles,
            structure,
            qmc,
            map: HashMap::new(),
        }
    }

    pub fn likelihood(&mut self, pattern: &AnnotationPattern, class: Class) -> Result<f64> {
        let (avail, pos) = pattern.masks();
        if let Some(&v) = self.map.get(&(avail, pos, class)) {
            return Ok(v);
        }
        let v = pattern_likelihood(pattern, class, self.profiles, self.structure, self.qmc)?;
        self.map.insert((avail, pos, class), v);
        Ok(v)
    }

    /// Posterior for a non-empty pattern; all-missing patterns are an error.
    pub fn posterior(&mut self, pattern: &AnnotationPattern, prevalence: f64) -> Result<f64> {
        let l1 = self.likelihood(pattern, Class::Expert)?;
        let l0 = self.likelihood(pattern, Class::NonExpert)?;
        Ok(posterior_from_likelihoods(prevalence, l1, l0))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompanyPosteriors {
    pub posteriors: Vec<f64>,
    /// Employees with no annotations at all; they received the prior.
    pub all_missing: usize,
}

/// Posteriors for a company's employees through a shared cache.
pub fn company_posteriors_cached(
    cache: &mut PatternLikelihoodCache<'_>,
    employees: &[AnnotationPattern],
    prevalence: f64,
) -> Result<CompanyPosteriors> {
    if employees.is_empty() {
        return Err(domain("company has no employees"));
    }
    check_prevalence(prevalence)?;
    let mut all_missing = 0;
    let mut by_pattern: HashMap<(u32, u32), f64> = HashMap::new();
    let mut posteriors = Vec::with_capacity(employees.len());
    for e in employees {
        if e.is_all_missing() {
            all_missing += 1;
            posteriors.push(prevalence);
            continue;
        }
        let key = e.masks();
        let p = match by_pattern.get(&key) {
            Some(&p) => p,
            None => {
                let p = cache.posterior(e, prevalence)?;
                by_pattern.insert(key, p);
                p
            }
        };
        posteriors.push(p);
    }
    Ok(CompanyPosteriors { posteriors, all_missing })
}

pub fn company_posteriors(
    employees: &[AnnotationPattern],
    prevalence: f64,
    profiles: &[AnnotatorProfile],
    structure: &CorrelationStructure,
    qmc: Qmc,
) -> Result<CompanyPosteriors> {
    let mut cache = PatternLikelihoodCache::new(profiles, structure, qmc);
    let out = company_posteriors_cached(&mut cache, employees, prevalence)?;
    if out.all_missing > 0 {
        log::warn!("{} employee(s) without annotations were assigned the prior prevalence", out.all_missing);
    }
    Ok(out)
}

/// Posterior for every validation record under one calibration, as used
/// for the fused-estimator diagnostics.
pub fn validation_posteriors(
    validation: &ValidationSet,
    profiles: &[AnnotatorProfile],
    structure: &CorrelationStructure,
    prevalence: f64,
    qmc: Qmc,
) -> Result<Vec<f64>> {
    let mut cache = PatternLikelihoodCache::new(profiles, structure, qmc);
    let patterns: Vec<AnnotationPattern> = validation.records().iter().map(|r| r.annotations.clone()).collect();
    Ok(company_posteriors_cached(&mut cache, &patterns, prevalence)?.posteriors)
}

/// Sum of independent Bernoulli(posterior) draws.
pub fn realize_headcount<R: Rng + ?Sized>(posteriors: &[f64], rng: &mut R) -> u64 {
    posteriors
        .iter()
        .map(|&p| u64::from(rng.gen::<f64>() < p.clamp(0.0, 1.0)))
        .sum()
}
