//! File formats: validation sets, employee annotations, aggregate counts,
//! priors, and the estimate, scoreboard and calibration reports.
//!
//! All tables are comma-separated with a header row. Annotation cells are
//! `1`, `0` or empty (missing). Parse errors report the 1-based line number
//! in the file, counting the header as line 1.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bootstrap::{default_priors, Category, EstimateSummary, Method, OrgType, PriorSpec, SizeBand, AGGREGATE_ID};
use crate::calibration::{AnnotatorProfile, ConfusionCounts, DiagnosticReport};
use crate::error::{Error, Result};
use crate::pattern::{Annotation, AnnotationPattern, Class, ValidationRecord, ValidationSet};
use crate::simulate::Scoreboard;
use crate::synthetic::AggregateCounts;

pub const DEFAULT_HEADCOUNT_RATIO_LIMIT: f64 = 3.0;
pub const DEFAULT_LLM_PREFIX: &str = "llm_";

pub const REPORT_HEADER: [&str; 10] = [
    "company_id",
    "n_employees",
    "mean",
    "q10",
    "q50",
    "q90",
    "ml_pct_q50",
    "category",
    "method",
    "marker",
];
const SYNTHETIC_MARKER: &str = "*";

fn parse_err(path: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        message: message.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => parse_err(path, row, format!("{kind:?}")),
    }
}

/// Header plus records with their line numbers.
struct Table {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<(usize, csv::StringRecord)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| csv_err(path, e))?;
        let header: Vec<String> = reader.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
        if header.iter().all(String::is_empty) {
            return Err(parse_err(path, 1, "missing header row"));
        }
        let mut seen = HashSet::new();
        for h in &header {
            if !seen.insert(h.as_str()) {
                return Err(parse_err(path, 1, format!("column `{h}` appears twice")));
            }
        }
        let rows = reader
            .records()
            .map(|r| {
                let r = r.map_err(|e| csv_err(path, e))?;
                let line = r.position().map_or(0, |p| p.line() as usize);
                Ok((line, r))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    fn require(&self, position: usize, name: &str) -> Result<()> {
        match self.header.get(position) {
            Some(h) if h == name => Ok(()),
            other => Err(parse_err(
                &self.path,
                1,
                format!("expected column {} to be `{name}`, found {:?}", position + 1, other.map(String::as_str).unwrap_or("")),
            )),
        }
    }

    fn err(&self, row: usize, message: impl Into<String>) -> Error {
        parse_err(&self.path, row, message)
    }
}

fn parse_cell(cell: &str) -> Option<Annotation> {
    match cell {
        "1" => Some(Annotation::Positive),
        "0" => Some(Annotation::Negative),
        "" => Some(Annotation::Missing),
        _ => None,
    }
}

fn annotation_cells(table: &Table, line: usize, record: &csv::StringRecord, first: usize) -> Result<Vec<Annotation>> {
    (first..table.header.len())
        .map(|i| {
            let cell = record.get(i).unwrap_or("");
            parse_cell(cell)
                .ok_or_else(|| table.err(line, format!("column `{}`: expected 1, 0 or empty, found `{cell}`", table.header[i])))
        })
        .collect()
}

fn cell_str(a: Annotation) -> &'static str {
    match a {
        Annotation::Positive => "1",
        Annotation::Negative => "0",
        Annotation::Missing => "",
    }
}

/// Columns `record_id, gold, <annotator>...`; gold is 1 or 0.
pub fn load_validation(path: &Path) -> Result<ValidationSet> {
    let table = Table::read(path)?;
    table.require(0, "record_id")?;
    table.require(1, "gold")?;
    let panel: Vec<String> = table.header[2..].to_vec();
    if panel.is_empty() {
        return Err(table.err(1, "no annotator columns"));
    }
    let mut ids = HashMap::new();
    let mut records = Vec::with_capacity(table.rows.len());
    for (line, r) in &table.rows {
        let id = r.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(table.err(*line, "empty record_id"));
        }
        if let Some(first) = ids.insert(id.clone(), *line) {
            return Err(table.err(*line, format!("duplicate record_id `{id}` (first seen on row {first})")));
        }
        let gold = match r.get(1).unwrap_or("") {
            "1" => Class::Expert,
            "0" => Class::NonExpert,
            other => return Err(table.err(*line, format!("gold must be 1 or 0, found `{other}`"))),
        };
        records.push(ValidationRecord {
            record_id: id,
            gold,
            annotations: AnnotationPattern(annotation_cells(&table, *line, r, 2)?),
        });
    }
    ValidationSet::new(panel, records).map_err(|e| table.err(0, e.to_string()))
}

pub fn render_validation(validation: &ValidationSet) -> String {
    let mut out = String::from("record_id,gold");
    for a in validation.panel() {
        out.push(',');
        out.push_str(a);
    }
    out.push('\n');
    for r in validation.records() {
        let _ = write!(out, "{},{}", r.record_id, u8::from(r.gold.is_expert()));
        for &a in &r.annotations.0 {
            out.push(',');
            out.push_str(cell_str(a));
        }
        out.push('\n');
    }
    out
}

pub fn write_validation(validation: &ValidationSet, path: &Path) -> Result<()> {
    fs::write(path, render_validation(validation)).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestionRules {
    /// Companies whose row count and reported headcount differ by more than
    /// this factor lose their LLM annotations.
    pub headcount_ratio_limit: f64,
    /// Clamp aggregate counts above the headcount instead of rejecting them.
    pub clamp_prevalence: bool,
    /// Annotators treated as LLMs; `None` selects ids starting with `llm_`.
    pub llm_annotators: Option<Vec<String>>,
}

impl Default for IngestionRules {
    fn default() -> Self {
        Self {
            headcount_ratio_limit: DEFAULT_HEADCOUNT_RATIO_LIMIT,
            clamp_prevalence: true,
            llm_annotators: None,
        }
    }
}

impl IngestionRules {
    pub fn validate(&self) -> Result<()> {
        if self.headcount_ratio_limit > 1.0 && self.headcount_ratio_limit.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "headcount ratio limit must exceed 1, got {}",
                self.headcount_ratio_limit
            )))
        }
    }

    pub fn is_llm(&self, annotator: &str) -> bool {
        match &self.llm_annotators {
            Some(list) => list.iter().any(|a| a == annotator),
            None => annotator.starts_with(DEFAULT_LLM_PREFIX),
        }
    }

    /// True when `rows` and `reported` disagree by more than the limit.
    pub fn exceeds_ratio(&self, rows: u64, reported: u64) -> bool {
        let (r, h) = (rows as f64, reported as f64);
        if r == 0.0 || h == 0.0 {
            return r != h;
        }
        (r / h).max(h / r) > self.headcount_ratio_limit
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompanyAnnotations {
    pub company_id: String,
    pub patterns: Vec<AnnotationPattern>,
    pub reported_headcount: Option<u64>,
    /// LLM columns were cleared by the headcount ratio rule.
    pub llm_dropped: bool,
}

/// Columns `company_id, employee_id, <annotator>...`, annotators a subset
/// of `panel`. Patterns come back in panel order with absent columns
/// missing; companies keep their order of first appearance.
pub fn load_company_annotations(
    path: &Path,
    panel: &[String],
    rules: &IngestionRules,
    reported_headcounts: &BTreeMap<String, u64>,
) -> Result<Vec<CompanyAnnotations>> {
    rules.validate()?;
    let table = Table::read(path)?;
    table.require(0, "company_id")?;
    table.require(1, "employee_id")?;
    let columns: Vec<usize> = table.header[2..]
        .iter()
        .map(|h| {
            panel
                .iter()
                .position(|p| p == h)
                .ok_or_else(|| table.err(1, format!("annotator column `{h}` is not in the validation panel")))
        })
        .collect::<Result<_>>()?;

    let mut order: Vec<String> = Vec::new();
    let mut by_company: HashMap<String, Vec<AnnotationPattern>> = HashMap::new();
    let mut keys: HashMap<(String, String), usize> = HashMap::new();
    for (line, r) in &table.rows {
        let company = r.get(0).unwrap_or("").to_string();
        let employee = r.get(1).unwrap_or("").to_string();
        if company.is_empty() || employee.is_empty() {
            return Err(table.err(*line, "company_id and employee_id must be non-empty"));
        }
        if let Some(first) = keys.insert((company.clone(), employee.clone()), *line) {
            return Err(table.err(*line, format!("duplicate employee `{employee}` in company `{company}` (first seen on row {first})")));
        }
        let cells = annotation_cells(&table, *line, r, 2)?;
        let mut pattern = vec![Annotation::Missing; panel.len()];
        for (&col, a) in columns.iter().zip(cells) {
            pattern[col] = a;
        }
        by_company
            .entry(company.clone())
            .or_insert_with(|| {
                order.push(company);
                Vec::new()
            })
            .push(AnnotationPattern(pattern));
    }

    let llm: Vec<usize> = panel.iter().enumerate().filter(|(_, a)| rules.is_llm(a)).map(|(i, _)| i).collect();
    Ok(order
        .into_iter()
        .map(|company_id| {
            let mut patterns = by_company.remove(&company_id).unwrap_or_default();
            let reported = reported_headcounts.get(&company_id).copied();
            let rows = patterns.len() as u64;
            let llm_dropped = match reported {
                None => {
                    log::warn!("company `{company_id}`: no reported headcount, headcount ratio rule not applied");
                    false
                }
                Some(h) if rules.exceeds_ratio(rows, h) => {
                    log::warn!(
                        "company `{company_id}`: {rows} rows vs reported headcount {h} exceeds ratio {}; LLM annotations dropped",
                        rules.headcount_ratio_limit
                    );
                    for p in &mut patterns {
                        for &i in &llm {
                            p.0[i] = Annotation::Missing;
                        }
                    }
                    true
                }
                Some(_) => false,
            };
            CompanyAnnotations {
                company_id,
                patterns,
                reported_headcount: reported,
                llm_dropped,
            }
        })
        .collect())
}

/// Columns `company_id, total_headcount, <filter>...`; an empty filter
/// cell means that filter was not run for the company.
pub fn load_aggregates(path: &Path, rules: &IngestionRules) -> Result<Vec<AggregateCounts>> {
    let table = Table::read(path)?;
    table.require(0, "company_id")?;
    table.require(1, "total_headcount")?;
    let mut seen = HashSet::new();
    table
        .rows
        .iter()
        .map(|(line, r)| {
            let line = *line;
            let company = r.get(0).unwrap_or("").to_string();
            if company.is_empty() {
                return Err(table.err(line, "empty company_id"));
            }
            if !seen.insert(company.clone()) {
                return Err(table.err(line, format!("duplicate company_id `{company}`")));
            }
            let parse = |i: usize| -> Result<Option<u64>> {
                match r.get(i).unwrap_or("") {
                    "" => Ok(None),
                    s => s
                        .parse::<u64>()
                        .map(Some)
                        .map_err(|_| table.err(line, format!("column `{}`: expected a count, found `{s}`", table.header[i]))),
                }
            };
            let total = parse(1)?.ok_or_else(|| table.err(line, "total_headcount is empty"))?;
            let mut counts = BTreeMap::new();
            for i in 2..table.header.len() {
                if let Some(c) = parse(i)? {
                    if c > total && !rules.clamp_prevalence {
                        return Err(table.err(line, format!("filter `{}` count {c} exceeds headcount {total}", table.header[i])));
                    }
                    counts.insert(table.header[i].clone(), c);
                }
            }
            AggregateCounts::new(company, total, counts).map_err(|e| table.err(line, e.to_string()))
        })
        .collect()
}

const PRIOR_KEYS: [&str; 4] = ["org_type", "size_band", "alpha", "beta"];

/// TOML with one `[[prior]]` table per stratum. A missing file yields the
/// default priors.
pub fn load_priors(path: Option<&Path>) -> Result<Vec<PriorSpec>> {
    let Some(path) = path else {
        return Ok(default_priors());
    };
    if !path.exists() {
        log::warn!("{}: priors file not found, using defaults", path.display());
        return Ok(default_priors());
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_priors(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_priors(text: &str) -> Result<Vec<PriorSpec>> {
    let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    for key in doc.keys().filter(|k| *k != "prior") {
        log::warn!("ignoring unknown top-level key `{key}` in priors");
    }
    let Some(entries) = doc.get("prior") else {
        return Err(Error::Config("no [[prior]] entries".into()));
    };
    let entries = entries
        .as_array()
        .ok_or_else(|| Error::Config("`prior` must be an array of tables".into()))?;
    let mut seen = HashSet::new();
    entries
        .iter()
        .enumerate()
        .map(|(k, entry)| {
            let ctx = |msg: String| Error::Config(format!("prior #{}: {msg}", k + 1));
            let t = entry.as_table().ok_or_else(|| ctx("expected a table".into()))?;
            for key in t.keys().filter(|key| !PRIOR_KEYS.contains(&key.as_str())) {
                log::warn!("prior #{}: ignoring unknown key `{key}`", k + 1);
            }
            let text_field = |name: &str| {
                t.get(name)
                    .and_then(toml::Value::as_str)
                    .ok_or_else(|| ctx(format!("`{name}` must be a string")))
            };
            let number = |name: &str| {
                t.get(name)
                    .and_then(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
                    .ok_or_else(|| ctx(format!("`{name}` must be a number")))
            };
            let org: OrgType = text_field("org_type")?.parse()?;
            let band: SizeBand = text_field("size_band")?.parse()?;
            if !seen.insert((org, band)) {
                return Err(ctx(format!("duplicate stratum ({org}, {band})")));
            }
            PriorSpec::new(org, band, number("alpha")?, number("beta")?).map_err(|e| ctx(e.to_string()))
        })
        .collect()
}

pub fn render_priors(priors: &[PriorSpec]) -> String {
    let mut out = String::new();
    for p in priors {
        let _ = writeln!(
            out,
            "[[prior]]\norg_type = \"{}\"\nsize_band = \"{}\"\nalpha = {:?}\nbeta = {:?}\n",
            p.org_type, p.size_band, p.alpha, p.beta
        );
    }
    out
}

fn report_row(out: &mut String, e: &EstimateSummary) {
    let marker = if e.method == Method::Synthetic { SYNTHETIC_MARKER } else { "" };
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{:.2},{},{},{}",
        e.company_id,
        e.n_employees,
        e.mean,
        e.q10,
        e.q50,
        e.q90,
        e.ml_pct_q50(),
        e.category,
        e.method,
        marker
    );
}

/// One row per company followed by the portfolio row.
pub fn render_report(estimates: &[EstimateSummary], aggregate: &EstimateSummary) -> String {
    let mut out = REPORT_HEADER.join(",");
    out.push('\n');
    for e in estimates {
        report_row(&mut out, e);
    }
    report_row(&mut out, aggregate);
    out
}

pub fn write_report(estimates: &[EstimateSummary], aggregate: &EstimateSummary, path: &Path) -> Result<()> {
    fs::write(path, render_report(estimates, aggregate)).map_err(io_err(path))
}

/// Parse a report back into company rows and the portfolio row.
pub fn read_report(path: &Path) -> Result<(Vec<EstimateSummary>, EstimateSummary)> {
    let table = Table::read(path)?;
    for (i, name) in REPORT_HEADER.iter().enumerate() {
        table.require(i, name)?;
    }
    let mut rows: Vec<EstimateSummary> = table
        .rows
        .iter()
        .map(|(line, r)| {
            let f = |i: usize| r.get(i).unwrap_or("");
            let err = |i: usize| table.err(*line, format!("column `{}`: cannot parse `{}`", REPORT_HEADER[i], f(i)));
            let count = |i: usize| f(i).parse::<u64>().map_err(|_| err(i));
            Ok(EstimateSummary {
                company_id: f(0).to_string(),
                n_employees: count(1)?,
                mean: f(2).parse().map_err(|_| err(2))?,
                q10: count(3)?,
                q50: count(4)?,
                q90: count(5)?,
                category: f(7).parse::<Category>().map_err(|_| err(7))?,
                method: f(8).parse::<Method>().map_err(|_| err(8))?,
            })
        })
        .collect::<Result<_>>()?;
    match rows.pop() {
        Some(agg) if agg.company_id == AGGREGATE_ID => Ok((rows, agg)),
        _ => Err(table.err(table.rows.last().map_or(1, |r| r.0), "report must end with an AGGREGATE row")),
    }
}

/// `#` summary lines followed by one row per simulated company.
pub fn render_scoreboard(board: &Scoreboard) -> String {
    let mut out = String::new();
    let covered = board.rows.iter().filter(|r| r.covered).count();
    let _ = writeln!(out, "# coverage,{},{}/{}", board.coverage, covered, board.rows.len());
    let _ = writeln!(out, "# median_abs_error_q50,{}", board.median_abs_error);
    let _ = writeln!(out, "# fused_accuracy,{}", board.accuracy.fused_accuracy);
    for (id, acc) in &board.accuracy.individual {
        let _ = writeln!(out, "# accuracy_{id},{acc}");
    }
    let _ = writeln!(out, "# fused_beats_all,{}", board.accuracy.fused_beats_all());
    out.push_str("company_id,n_employees,truth,q10,q50,q90,covered\n");
    for r in &board.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.company_id,
            r.n_employees,
            r.truth,
            r.q10,
            r.q50,
            r.q90,
            u8::from(r.covered)
        );
    }
    out
}

pub fn write_scoreboard(board: &Scoreboard, path: &Path) -> Result<()> {
    fs::write(path, render_scoreboard(board)).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotatorEntry {
    #[serde(flatten)]
    pub profile: AnnotatorProfile,
    pub counts: ConfusionCounts,
    pub diagnostics: DiagnosticReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusedEntry {
    pub cut: f64,
    pub prevalence: f64,
    pub diagnostics: DiagnosticReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub records: usize,
    pub experts: usize,
    pub non_experts: usize,
    pub annotators: Vec<AnnotatorEntry>,
    pub panel: Vec<String>,
    pub r_pos: Vec<Vec<f64>>,
    pub r_neg: Vec<Vec<f64>>,
    pub fused: FusedEntry,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}
