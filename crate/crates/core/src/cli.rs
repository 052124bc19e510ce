//! Command-line surface: `calibrate`, `estimate`, `simulate` and `report`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::bootstrap::{
    run_portfolio, select_prior, BootstrapConfig, CompanyInput, CompanySource, OrgType, PortfolioRun, SizeBand,
    DEFAULT_ITERATIONS,
};
use crate::calibration::{calibrate, confusion_counts, diagnostic_metrics, fused_confusion, DEFAULT_MIN_CLASS_COUNT};
use crate::error::{Error, Result};
use crate::inference::{validation_posteriors, Qmc};
use crate::io::{
    load_aggregates, load_company_annotations, load_priors, load_validation, read_report, write_json, write_report,
    write_scoreboard, AnnotatorEntry, CalibrationReport, FusedEntry, IngestionRules, DEFAULT_HEADCOUNT_RATIO_LIMIT,
};
use crate::numerics::orthant::DEFAULT_ACCURACY;
use crate::pattern::Class;
use crate::rng::{derive_seed, Stream};
use crate::simulate::{run_simulation, Scoreboard, SimulationScenario, FUSED_CUT};
use crate::synthetic::{SyntheticConfig, DEFAULT_ADJUSTMENT};

#[derive(Debug, Parser)]
#[command(name = "probitfuse", version, about = "Correlated-annotator fusion for expert headcount estimation")]
pub struct Cli {
    /// Base seed for every random stream.
    #[arg(long, global = true, env = "PROBITFUSE_SEED", default_value_t = 0)]
    pub seed: u64,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit annotator profiles and correlation structure on a validation set.
    Calibrate(CalibrateArgs),
    /// Bootstrap headcount estimates for real and aggregate-only companies.
    Estimate(EstimateArgs),
    /// Run a ground-truth simulation and write a scoreboard.
    Simulate(SimulateArgs),
    /// Print a report in `q50 (q10 - q90)` form.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub validation: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_CLASS_COUNT)]
    pub min_class_count: usize,
    #[arg(long, default_value_t = DEFAULT_ACCURACY)]
    pub accuracy: f64,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    pub iterations: usize,
    /// Absolute accuracy target for orthant probabilities.
    #[arg(long, default_value_t = DEFAULT_ACCURACY)]
    pub accuracy: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_CLASS_COUNT)]
    pub min_class_count: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub validation: PathBuf,
    /// Employee-level annotations.
    #[arg(long)]
    pub companies: Option<PathBuf>,
    /// Aggregate keyword-filter counts and reported headcounts.
    #[arg(long)]
    pub aggregates: Option<PathBuf>,
    /// Priors TOML; the built-in table when omitted.
    #[arg(long)]
    pub priors: Option<PathBuf>,
    /// `TYPE` for every company or `COMPANY=TYPE`; repeatable.
    #[arg(long = "org-type")]
    pub org_types: Vec<String>,
    /// `BAND` for every company or `COMPANY=BAND`; repeatable.
    #[arg(long = "size-band")]
    pub size_bands: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_ADJUSTMENT)]
    pub adjustment: f64,
    #[arg(long, default_value_t = DEFAULT_HEADCOUNT_RATIO_LIMIT)]
    pub ratio_limit: f64,
    /// Comma-separated LLM annotator ids (default: ids starting with `llm_`).
    #[arg(long, value_delimiter = ',')]
    pub llm_annotators: Option<Vec<String>>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Scenario TOML; the built-in default scenario when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Report CSV written by `estimate`.
    #[arg(long)]
    pub input: PathBuf,
    /// Write here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Per-company overrides with an optional global default.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Overrides<T> {
    pub default: Option<T>,
    pub per_company: BTreeMap<String, T>,
}

impl<T: FromStr<Err = Error> + Copy> Overrides<T> {
    pub fn parse(values: &[String]) -> Result<Self> {
        let mut out = Self {
            default: None,
            per_company: BTreeMap::new(),
        };
        for v in values {
            match v.split_once('=') {
                Some((company, value)) => {
                    out.per_company.insert(company.trim().to_string(), value.parse()?);
                }
                None => out.default = Some(v.parse()?),
            }
        }
        Ok(out)
    }

    pub fn get(&self, company: &str) -> Option<T> {
        self.per_company.get(company).copied().or(self.default)
    }
}

impl RunArgs {
    pub fn bootstrap_config(&self, seed: u64, adjustment: f64) -> Result<BootstrapConfig> {
        if self.iterations == 0 {
            return Err(Error::Config("--iterations must be at least 1".into()));
        }
        if !(self.accuracy > 0.0 && self.accuracy <= 0.1) {
            return Err(Error::Config(format!("--accuracy must lie in (0, 0.1], got {}", self.accuracy)));
        }
        let synthetic = SyntheticConfig {
            adjustment,
            copula_seed: derive_seed(seed, Stream::Copula, &[]),
        };
        synthetic.validate().map_err(|e| Error::Config(format!("--adjustment: {e}")))?;
        Ok(BootstrapConfig {
            iterations: self.iterations,
            seed,
            min_class_count: self.min_class_count,
            accuracy: self.accuracy,
            synthetic,
        })
    }
}

pub fn cmd_calibrate(args: &CalibrateArgs, seed: u64) -> Result<CalibrationReport> {
    let validation = load_validation(&args.validation)?;
    let cal = calibrate(&validation, args.min_class_count)?;
    let n_pos = validation.class_count(Class::Expert);
    let n_neg = validation.class_count(Class::NonExpert);
    let annotators = cal
        .profiles
        .iter()
        .map(|p| {
            Ok(AnnotatorEntry {
                counts: confusion_counts(&validation, &p.annotator_id)?,
                diagnostics: diagnostic_metrics(p, n_pos as u64, n_neg as u64)?,
                profile: p.clone(),
            })
        })
        .collect::<Result<_>>()?;
    let prevalence = n_pos as f64 / validation.len() as f64;
    let qmc = Qmc::new(derive_seed(seed, Stream::Qmc, &[])).with_accuracy(args.accuracy);
    let posteriors = validation_posteriors(&validation, &cal.profiles, &cal.structure, prevalence, qmc)?;
    let report = CalibrationReport {
        records: validation.len(),
        experts: n_pos,
        non_experts: n_neg,
        annotators,
        panel: cal.structure.panel.clone(),
        r_pos: cal.structure.r_pos.rows(),
        r_neg: cal.structure.r_neg.rows(),
        fused: FusedEntry {
            cut: FUSED_CUT,
            prevalence,
            diagnostics: fused_confusion(&validation, &posteriors, FUSED_CUT)?,
        },
    };
    write_json(&report, &args.out)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOutcome {
    pub run: PortfolioRun,
    /// Real companies whose LLM annotations were dropped by the headcount
    /// ratio rule.
    pub llm_dropped: Vec<String>,
}

pub fn cmd_estimate(args: &EstimateArgs, seed: u64) -> Result<EstimateOutcome> {
    if args.companies.is_none() && args.aggregates.is_none() {
        return Err(Error::Config("estimate needs --companies, --aggregates or both".into()));
    }
    let config = args.run.bootstrap_config(seed, args.adjustment)?;
    let org_types: Overrides<OrgType> = Overrides::parse(&args.org_types)?;
    let size_bands: Overrides<SizeBand> = Overrides::parse(&args.size_bands)?;
    let rules = IngestionRules {
        headcount_ratio_limit: args.ratio_limit,
        llm_annotators: args.llm_annotators.clone(),
        ..IngestionRules::default()
    };
    rules.validate()?;
    let validation = load_validation(&args.validation)?;
    let priors = load_priors(args.priors.as_deref())?;
    let aggregates = match &args.aggregates {
        Some(p) => load_aggregates(p, &rules)?,
        None => Vec::new(),
    };
    let reported: BTreeMap<String, u64> = aggregates.iter().map(|a| (a.company_id.clone(), a.total_headcount)).collect();
    let real = match &args.companies {
        Some(p) => load_company_annotations(p, validation.panel(), &rules, &reported)?,
        None => Vec::new(),
    };

    let prior_for = |id: &str, headcount: u64| {
        let org = org_types.get(id).unwrap_or(OrgType::Unknown);
        let band = size_bands.get(id).unwrap_or_else(|| SizeBand::from_headcount(headcount));
        select_prior(&priors, org, band)
    };
    let mut inputs = Vec::with_capacity(real.len() + aggregates.len());
    let mut llm_dropped = Vec::new();
    for c in real {
        let headcount = c.reported_headcount.unwrap_or(c.patterns.len() as u64);
        if c.llm_dropped {
            llm_dropped.push(c.company_id.clone());
        }
        inputs.push(CompanyInput {
            prior: prior_for(&c.company_id, headcount)?,
            company_id: c.company_id,
            source: CompanySource::Employees(c.patterns),
        });
    }
    let n_real = inputs.len();
    for a in aggregates {
        if inputs[..n_real].iter().any(|c| c.company_id == a.company_id) {
            log::warn!("company `{}` has employee-level data; aggregate counts ignored", a.company_id);
            continue;
        }
        inputs.push(CompanyInput {
            prior: prior_for(&a.company_id, a.total_headcount)?,
            company_id: a.company_id.clone(),
            source: CompanySource::Aggregate(a),
        });
    }
    if !llm_dropped.is_empty() {
        log::info!("LLM annotations dropped for: {}", llm_dropped.join(", "));
    }
    let run = run_portfolio(&inputs, &validation, &config)?;
    write_report(&run.summaries, &run.aggregate, &args.run.out)?;
    Ok(EstimateOutcome { run, llm_dropped })
}

pub fn load_scenario(path: Option<&Path>) -> Result<SimulationScenario> {
    let Some(path) = path else {
        return Ok(SimulationScenario::default());
    };
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn cmd_simulate(args: &SimulateArgs, seed: u64) -> Result<Scoreboard> {
    let scenario = load_scenario(args.scenario.as_deref())?;
    let config = args.run.bootstrap_config(seed, DEFAULT_ADJUSTMENT)?;
    let outcome = run_simulation(&scenario, &config)?;
    write_scoreboard(&outcome.scoreboard, &args.run.out)?;
    Ok(outcome.scoreboard)
}

/// Aligned text table in `q50 (q10 - q90)` form, synthetic rows starred.
pub fn render_supplement(path: &Path) -> Result<String> {
    let (rows, aggregate) = read_report(path)?;
    let all: Vec<_> = rows.iter().chain(std::iter::once(&aggregate)).collect();
    let width = all.iter().map(|e| e.company_id.len()).max().unwrap_or(0).max("Company".len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>9}  {:<22}  {:>7}  Category",
        "Company", "Employees", "ML q50 (q10 - q90)", "ML %"
    );
    for e in all {
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:<22}  {:>6.2}%  {}",
            e.company_id,
            e.n_employees,
            e.interval_label(),
            e.ml_pct_q50(),
            e.category
        );
    }
    Ok(out)
}

pub fn cmd_report(args: &ReportArgs) -> Result<String> {
    let text = render_supplement(&args.input)?;
    if let Some(out) = &args.out {
        fs::write(out, &text).map_err(|source| Error::Io {
            path: out.clone(),
            source,
        })?;
    }
    Ok(text)
}

/// Dispatch a parsed command line; returns text for standard output.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Calibrate(a) => {
            let r = cmd_calibrate(a, cli.seed)?;
            let mut s = String::new();
            for e in &r.annotators {
                let _ = writeln!(
                    s,
                    "{}: sensitivity {:.3}, specificity {:.3}",
                    e.profile.annotator_id, e.profile.sensitivity, e.profile.specificity
                );
            }
            let d = &r.fused.diagnostics;
            let _ = writeln!(
                s,
                "fused: sensitivity {:.3}, specificity {:.3}, accuracy {:.3}",
                d.sensitivity, d.specificity, d.accuracy
            );
            Ok(s)
        }
        Command::Estimate(a) => {
            let o = cmd_estimate(a, cli.seed)?;
            let g = &o.run.aggregate;
            Ok(format!(
                "{} companies, portfolio {} ({} - {}), report written to {}\n",
                o.run.summaries.len(),
                g.q50,
                g.q10,
                g.q90,
                a.run.out.display()
            ))
        }
        Command::Simulate(a) => {
            let b = cmd_simulate(a, cli.seed)?;
            Ok(format!(
                "coverage {:.3}, median |q50 - truth| {}, fused accuracy {:.3} (beats every annotator: {})\n",
                b.coverage,
                b.median_abs_error,
                b.accuracy.fused_accuracy,
                b.accuracy.fused_beats_all()
            ))
        }
        Command::Report(a) => {
            let text = cmd_report(a)?;
            Ok(if a.out.is_some() { String::new() } else { text })
        }
    }
}
