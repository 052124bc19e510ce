#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use probitfuse::io::write_validation;
use probitfuse::pattern::Annotation;
use probitfuse::simulate::{generate_population, Population, SimulationScenario};

pub struct Fixture {
    pub validation: PathBuf,
    pub companies: PathBuf,
    pub aggregates: PathBuf,
    pub population: Population,
}

pub fn small_scenario(seed: u64) -> SimulationScenario {
    SimulationScenario {
        seed,
        n_companies: 4,
        employees_per_company: [30, 120],
        ..SimulationScenario::default()
    }
}

/// Validation set, employee annotations for three companies and aggregate
/// counts for five (one overlapping a real company, one with a headcount
/// far from its row count).
pub fn write_fixture(dir: &Path, seed: u64) -> Fixture {
    let population = generate_population(&small_scenario(seed)).unwrap();
    let validation = dir.join("validation.csv");
    write_validation(&population.validation, &validation).unwrap();

    let panel = population.validation.panel().to_vec();
    let mut companies = String::from("company_id,employee_id");
    for a in &panel {
        companies.push(',');
        companies.push_str(a);
    }
    companies.push('\n');
    for c in &population.companies[..3] {
        for (k, p) in c.patterns.iter().enumerate() {
            let _ = write!(companies, "{},e{k}", c.company_id);
            for &a in &p.0 {
                companies.push_str(match a {
                    Annotation::Positive => ",1",
                    Annotation::Negative => ",0",
                    Annotation::Missing => ",",
                });
            }
            companies.push('\n');
        }
    }
    let companies_path = dir.join("companies.csv");
    fs::write(&companies_path, companies).unwrap();

    let kw: Vec<usize> = (0..panel.len()).filter(|&i| panel[i].starts_with("kw_")).collect();
    let mut aggregates = String::from("company_id,total_headcount");
    for &i in &kw {
        aggregates.push(',');
        aggregates.push_str(&panel[i]);
    }
    aggregates.push('\n');
    let count = |c: &probitfuse::simulate::SimulatedCompany, i: usize| {
        c.patterns.iter().filter(|p| p.get(i) == Annotation::Positive).count()
    };
    for (n, c) in population.companies.iter().enumerate() {
        let reported = if n == 1 { c.patterns.len() * 5 } else { c.patterns.len() };
        let _ = write!(aggregates, "{},{reported}", c.company_id);
        for &i in &kw {
            let _ = write!(aggregates, ",{}", count(c, i));
        }
        aggregates.push('\n');
    }
    aggregates.push_str("agg-only-a,400,12,30,");
    aggregates.push('\n');
    aggregates.push_str("agg-only-b,60,0,1,2\n");
    let aggregates_path = dir.join("aggregates.csv");
    fs::write(&aggregates_path, aggregates).unwrap();

    Fixture {
        validation,
        companies: companies_path,
        aggregates: aggregates_path,
        population,
    }
}
