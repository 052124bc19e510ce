//! Annotator confusion profiles, tetrachoric correlation structure and
//! diagnostic metrics, all estimated from a gold-labeled validation set.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numerics::{bvn_cdf, nearest_correlation, std_normal_quantile, CorrelationMatrix};
use crate::pattern::{Class, ValidationSet};

pub const DEFAULT_MIN_CLASS_COUNT: usize = 30;
const RHO_LIMIT: f64 = crate::numerics::linalg::MAX_ABS_CORRELATION;

/// One annotator's error rates and the probit thresholds they imply.
///
/// Given a true expert the annotator says positive iff its latent score
/// exceeds `tau_pos`; given a non-expert, iff it exceeds `tau_neg`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub annotator_id: String,
    pub sensitivity: f64,
    pub specificity: f64,
    pub tau_pos: f64,
    pub tau_neg: f64,
}

impl AnnotatorProfile {
    pub fn new(annotator_id: impl Into<String>, sensitivity: f64, specificity: f64) -> Result<Self> {
        let annotator_id = annotator_id.into();
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(sensitivity) || !open(specificity) {
            return Err(Error::Calibration {
                annotator: annotator_id,
                reason: format!(
                    "sensitivity {sensitivity} and specificity {specificity} must lie strictly inside (0, 1)"
                ),
            });
        }
        Ok(Self {
            tau_pos: std_normal_quantile(1.0 - sensitivity)?,
            tau_neg: std_normal_quantile(specificity)?,
            annotator_id,
            sensitivity,
            specificity,
        })
    }

    pub fn threshold(&self, class: Class) -> f64 {
        match class {
            Class::Expert => self.tau_pos,
            Class::NonExpert => self.tau_neg,
        }
    }

    /// P(annotator says positive | class).
    pub fn positive_rate(&self, class: Class) -> f64 {
        match class {
            Class::Expert => self.sensitivity,
            Class::NonExpert => 1.0 - self.specificity,
        }
    }
}

/// 2×2 confusion table of an annotator (or fused estimator) against gold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub fp: u64,
}

impl ConfusionCounts {
    pub fn add(&mut self, gold: Class, predicted_positive: bool) {
        match (gold, predicted_positive) {
            (Class::Expert, true) => self.tp += 1,
            (Class::Expert, false) => self.fn_ += 1,
            (Class::NonExpert, false) => self.tn += 1,
            (Class::NonExpert, true) => self.fp += 1,
        }
    }

    pub fn n_pos(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn n_neg(&self) -> u64 {
        self.tn + self.fp
    }

    /// Raw (unclamped) diagnostics.
    pub fn report(&self) -> Result<DiagnosticReport> {
        if self.n_pos() == 0 || self.n_neg() == 0 {
            return Err(domain("diagnostics need at least one record of each gold class"));
        }
        let sensitivity = self.tp as f64 / self.n_pos() as f64;
        let specificity = self.tn as f64 / self.n_neg() as f64;
        Ok(DiagnosticReport::from_rates(sensitivity, specificity, self.n_pos(), self.n_neg()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub lr_pos: f64,
    pub lr_neg: f64,
}

impl DiagnosticReport {
    fn from_rates(sensitivity: f64, specificity: f64, n_pos: u64, n_neg: u64) -> Self {
        let w = n_pos as f64 / (n_pos + n_neg) as f64;
        Self {
            sensitivity,
            specificity,
            accuracy: w * sensitivity + (1.0 - w) * specificity,
            lr_pos: sensitivity / (1.0 - specificity),
            lr_neg: (1.0 - sensitivity) / specificity,
        }
    }
}

/// Diagnostic metrics of a profile over a validation split of
/// `n_pos` experts and `n_neg` non-experts.
pub fn diagnostic_metrics(profile: &AnnotatorProfile, n_pos: u64, n_neg: u64) -> Result<DiagnosticReport> {
    if n_pos == 0 || n_neg == 0 {
        return Err(domain("diagnostic_metrics needs n_pos ≥ 1 and n_neg ≥ 1"));
    }
    Ok(DiagnosticReport::from_rates(profile.sensitivity, profile.specificity, n_pos, n_neg))
}

/// Confusion counts of one annotator over its non-missing annotations.
pub fn confusion_counts(validation: &ValidationSet, annotator_id: &str) -> Result<ConfusionCounts> {
    let idx = validation.annotator_index(annotator_id).ok_or_else(|| Error::Calibration {
        annotator: annotator_id.to_string(),
        reason: "annotator not present in validation data".into(),
    })?;
    let mut counts = ConfusionCounts::default();
    for r in validation.records() {
        if let Some(v) = r.annotations.get(idx).value() {
            counts.add(r.gold, v);
        }
    }
    Ok(counts)
}

/// Sensitivity and specificity of one annotator, clamped by half a count
/// so the probit thresholds stay finite.
pub fn estimate_confusion(validation: &ValidationSet, annotator_id: &str) -> Result<AnnotatorProfile> {
    let c = confusion_counts(validation, annotator_id)?;
    let (n_pos, n_neg) = (c.n_pos(), c.n_neg());
    for (n, class) in [(n_pos, "expert"), (n_neg, "non-expert")] {
        if n == 0 {
            return Err(Error::Calibration {
                annotator: annotator_id.to_string(),
                reason: format!("no non-missing annotations on gold {class} records"),
            });
        }
    }
    let clamp = |k: u64, n: u64| {
        let half = 0.5 / n as f64;
        (k as f64 / n as f64).clamp(half, 1.0 - half)
    };
    AnnotatorProfile::new(annotator_id, clamp(c.tp, n_pos), clamp(c.tn, n_neg))
}

/// Tetrachoric correlation of a 2×2 table.
///
/// `table[i][j]` counts records where the first annotator gave `i` and the
/// second gave `j`, with index 0 = positive and 1 = negative. Zero cells get
/// a +0.5 continuity correction; the result is clamped to ±0.999.
pub fn tetrachoric(table: [[f64; 2]; 2]) -> Result<f64> {
    if table.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::DegenerateTable {
            context: String::new(),
            reason: "counts must be finite and nonnegative".into(),
        });
    }
    if table.iter().flatten().sum::<f64>() == 0.0 {
        return Err(Error::DegenerateTable {
            context: String::new(),
            reason: "table holds no observations".into(),
        });
    }
    let mut t = table;
    for v in t.iter_mut().flatten() {
        if *v == 0.0 {
            *v = 0.5;
        }
    }
    let n: f64 = t.iter().flatten().sum();
    let row_pos = (t[0][0] + t[0][1]) / n;
    let col_pos = (t[0][0] + t[1][0]) / n;
    let both = t[0][0] / n;
    for m in [row_pos, col_pos] {
        if !(m > 0.0 && m < 1.0) {
            return Err(Error::DegenerateTable {
                context: String::new(),
                reason: "a row or column margin is empty".into(),
            });
        }
    }
    let h = std_normal_quantile(row_pos)?;
    let k = std_normal_quantile(col_pos)?;
    let f = |rho: f64| bvn_cdf(h, k, rho) - both;

    let (mut lo, mut hi) = (-RHO_LIMIT, RHO_LIMIT);
    if f(hi) <= 0.0 {
        return Ok(RHO_LIMIT);
    }
    if f(lo) >= 0.0 {
        return Ok(-RHO_LIMIT);
    }
    // f is increasing in rho.
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if v.abs() <= 1e-13 {
            return Ok(mid);
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Class-conditional latent correlation matrices over an annotator panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationStructure {
    pub panel: Vec<String>,
    pub r_pos: CorrelationMatrix,
    pub r_neg: CorrelationMatrix,
}

impl CorrelationStructure {
    pub fn independent(panel: Vec<String>) -> Self {
        let n = panel.len();
        Self {
            panel,
            r_pos: CorrelationMatrix::identity(n),
            r_neg: CorrelationMatrix::identity(n),
        }
    }

    pub fn matrix(&self, class: Class) -> &CorrelationMatrix {
        match class {
            Class::Expert => &self.r_pos,
            Class::NonExpert => &self.r_neg,
        }
    }
}

fn pairwise_matrix(
    validation: &ValidationSet,
    idx: &[usize],
    class: Option<Class>,
) -> Result<CorrelationMatrix> {
    let n = idx.len();
    let panel = validation.panel();
    let mut rows = vec![vec![0.0; n]; n];
    for (a, row) in rows.iter_mut().enumerate() {
        row[a] = 1.0;
    }
    for a in 0..n {
        for b in a + 1..n {
            let mut table = [[0.0; 2]; 2];
            for r in validation.records().iter().filter(|r| class.is_none_or(|c| r.gold == c)) {
                if let (Some(x), Some(y)) = (r.annotations.get(idx[a]).value(), r.annotations.get(idx[b]).value()) {
                    table[usize::from(!x)][usize::from(!y)] += 1.0;
                }
            }
            let rho = tetrachoric(table).map_err(|e| match e {
                Error::DegenerateTable { reason, .. } => Error::DegenerateTable {
                    context: format!(
                        " for annotators `{}` and `{}` ({})",
                        panel[idx[a]],
                        panel[idx[b]],
                        class.map_or("pooled".to_string(), |c| format!("{c:?}"))
                    ),
                    reason,
                },
                other => other,
            })?;
            rows[a][b] = rho;
            rows[b][a] = rho;
        }
    }
    nearest_correlation(&rows)
}

/// Pairwise tetrachoric matrices per gold class. Classes with fewer than
/// `min_class_count` records reuse the pooled matrix.
pub fn build_correlation_structure(
    validation: &ValidationSet,
    panel: &[String],
    min_class_count: usize,
) -> Result<CorrelationStructure> {
    let idx = panel
        .iter()
        .map(|id| {
            validation.annotator_index(id).ok_or_else(|| Error::Calibration {
                annotator: id.clone(),
                reason: "annotator not present in validation data".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut pooled: Option<CorrelationMatrix> = None;
    let mut per_class = |class: Class| -> Result<CorrelationMatrix> {
        if validation.class_count(class) >= min_class_count {
            pairwise_matrix(validation, &idx, Some(class))
        } else {
            if pooled.is_none() {
                pooled = Some(pairwise_matrix(validation, &idx, None)?);
            }
            Ok(pooled.clone().expect("pooled matrix just computed"))
        }
    };
    let r_pos = per_class(Class::Expert)?;
    let r_neg = per_class(Class::NonExpert)?;
    Ok(CorrelationStructure {
        panel: panel.to_vec(),
        r_pos,
        r_neg,
    })
}

/// Profiles for every panel annotator plus the correlation structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub profiles: Vec<AnnotatorProfile>,
    pub structure: CorrelationStructure,
}

pub fn calibrate(validation: &ValidationSet, min_class_count: usize) -> Result<Calibration> {
    let profiles = validation
        .panel()
        .iter()
        .map(|id| estimate_confusion(validation, id))
        .collect::<Result<Vec<_>>>()?;
    let structure = build_correlation_structure(validation, validation.panel(), min_class_count)?;
    Ok(Calibration { profiles, structure })
}

/// Diagnostics of fused posteriors thresholded at `cut` (positive iff ≥ cut).
pub fn fused_confusion(validation: &ValidationSet, posteriors: &[f64], cut: f64) -> Result<DiagnosticReport> {
    if posteriors.len() != validation.len() {
        return Err(domain(format!(
            "{} posteriors for {} validation records",
            posteriors.len(),
            validation.len()
        )));
    }
    if !(cut > 0.0 && cut < 1.0) {
        return Err(domain(format!("cut must lie in (0, 1), got {cut}")));
    }
    let mut counts = ConfusionCounts::default();
    for (r, &p) in validation.records().iter().zip(posteriors) {
        counts.add(r.gold, p >= cut);
    }
    counts.report()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::{Annotation, AnnotationPattern, ValidationRecord};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(panel: &[&str], rows: Vec<(bool, Vec<Annotation>)>) -> ValidationSet {
        let records = rows
            .into_iter()
            .enumerate()
            .map(|(i, (g, a))| ValidationRecord {
                record_id: format!("r{i}"),
                gold: Class::from_indicator(g),
                annotations: AnnotationPattern(a),
            })
            .collect();
        ValidationSet::new(panel.iter().map(|s| s.to_string()).collect(), records).unwrap()
    }

    fn ann(b: bool) -> Annotation {
        Annotation::from_bool(b)
    }

    #[test]
    fn hand_counted_confusion() {
        let mut rows = Vec::new();
        for i in 0..5 {
            rows.push((true, vec![ann(i < 4)]));
        }
        for i in 0..10 {
            rows.push((false, vec![ann(i >= 9)]));
        }
        let v = set(&["a"], rows);
        let p = estimate_confusion(&v, "a").unwrap();
        assert!((p.sensitivity - 0.8).abs() < 1e-15);
        assert!((p.specificity - 0.9).abs() < 1e-15);
        assert!((p.tau_pos - std_normal_quantile(0.2).unwrap()).abs() < 1e-15);
        assert!((p.tau_neg - std_normal_quantile(0.9).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn perfect_annotator_is_clamped() {
        let rows = (0..20).map(|i| (i < 8, vec![ann(i < 8)])).collect();
        let p = estimate_confusion(&set(&["a"], rows), "a").unwrap();
        assert_eq!(p.sensitivity, 1.0 - 0.5 / 8.0);
        assert_eq!(p.specificity, 1.0 - 0.5 / 12.0);
        assert!(p.tau_pos.is_finite() && p.tau_neg.is_finite());
    }

    #[test]
    fn coin_flip_profile_has_zero_expert_threshold() {
        let p = AnnotatorProfile::new("x", 0.5, 0.7).unwrap();
        assert_eq!(p.tau_pos, 0.0);
    }

    #[test]
    fn confusion_errors_name_the_annotator() {
        let rows = vec![
            (true, vec![Annotation::Missing, ann(true)]),
            (false, vec![ann(false), ann(false)]),
        ];
        let v = set(&["a", "b"], rows);
        let err = estimate_confusion(&v, "a").unwrap_err().to_string();
        assert!(err.contains("`a`"), "{err}");
        let err = estimate_confusion(&v, "zzz").unwrap_err().to_string();
        assert!(err.contains("zzz"));
    }

    #[test]
    fn diagnostics_from_reference_counts() {
        let p = AnnotatorProfile::new("fused", 0.791, 0.926).unwrap();
        let d = diagnostic_metrics(&p, 153, 432).unwrap();
        assert!((d.accuracy - 0.891).abs() < 0.001);
        assert!((d.lr_pos - 10.69).abs() < 0.05);
        assert!((d.lr_neg - 0.2257).abs() < 0.001);
    }

    #[test]
    fn diagnostics_trivial_cases() {
        let d = DiagnosticReport::from_rates(1.0, 1.0, 3, 7);
        assert_eq!(d.accuracy, 1.0);
        let p = AnnotatorProfile::new("u", 0.5, 0.5).unwrap();
        let d = diagnostic_metrics(&p, 10, 10).unwrap();
        assert_eq!((d.lr_pos, d.lr_neg), (1.0, 1.0));
        let p = AnnotatorProfile::new("u", 0.63, 0.81).unwrap();
        let d = diagnostic_metrics(&p, 50, 50).unwrap();
        assert_eq!(d.accuracy, (0.63 + 0.81) / 2.0);
        assert!(diagnostic_metrics(&p, 0, 5).is_err());
    }

    #[test]
    fn tetrachoric_independence_and_limits() {
        assert!(tetrachoric([[25.0, 25.0], [25.0, 25.0]]).unwrap().abs() < 1e-6);
        assert_eq!(tetrachoric([[50.0, 0.0], [0.0, 50.0]]).unwrap(), 0.999);
        assert_eq!(tetrachoric([[0.0, 50.0], [50.0, 0.0]]).unwrap(), -0.999);
        // Independent but unbalanced margins: p = 0.2 and 0.7.
        assert!(tetrachoric([[14.0, 6.0], [56.0, 24.0]]).unwrap().abs() < 1e-6);
    }

    #[test]
    fn tetrachoric_inverts_origin_identity() {
        // Margins 1/2, joint both-positive 1/3: 1/4 + asin(ρ)/2π = 1/3 ⇒ ρ = sin(π/6).
        let rho = tetrachoric([[200.0, 100.0], [100.0, 200.0]]).unwrap();
        assert!((rho - 0.5).abs() < 1e-9, "{rho}");
    }

    #[test]
    fn tetrachoric_rejects_empty_table() {
        assert!(matches!(tetrachoric([[0.0; 2]; 2]), Err(Error::DegenerateTable { .. })));
        assert!(tetrachoric([[1.0, -1.0], [2.0, 3.0]]).is_err());
    }

    #[test]
    fn tetrachoric_antisymmetric_and_scale_invariant() {
        let t = [[37.0, 12.0], [21.0, 55.0]];
        let rho = tetrachoric(t).unwrap();
        let flipped = tetrachoric([[t[0][1], t[0][0]], [t[1][1], t[1][0]]]).unwrap();
        assert!((rho + flipped).abs() < 1e-6);
        let scaled = tetrachoric(t.map(|r| r.map(|v| v * 7.5))).unwrap();
        assert!((rho - scaled).abs() < 1e-6);
    }

    fn random_set(n: usize, seed: u64) -> ValidationSet {
        random_set_every(n, 3, seed)
    }

    /// Every `stride`-th record is an expert; annotators are independent coins.
    fn random_set_every(n: usize, stride: usize, seed: u64) -> ValidationSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|i| {
                let gold = i % stride == 0;
                (gold, (0..3).map(|_| ann(rng.gen_bool(0.4))).collect())
            })
            .collect();
        set(&["a", "b", "c"], rows)
    }

    #[test]
    fn independent_annotators_have_near_zero_structure() {
        // 1000 records per class.
        let v = random_set_every(2000, 2, 3);
        let s = build_correlation_structure(&v, v.panel(), DEFAULT_MIN_CLASS_COUNT).unwrap();
        for m in [&s.r_pos, &s.r_neg] {
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        assert!(m.get(i, j).abs() < 0.1, "{}", m.get(i, j));
                    }
                }
            }
            // Already repaired: idempotent.
            assert_eq!(&nearest_correlation(&m.rows()).unwrap(), m);
        }
    }

    #[test]
    fn agreeing_annotators_clamp() {
        let rows = (0..200).map(|i| (i % 2 == 0, vec![ann(i % 4 < 2), ann(i % 4 < 2)])).collect();
        let v = set(&["a", "b"], rows);
        let s = build_correlation_structure(&v, v.panel(), 30).unwrap();
        assert!((s.r_pos.get(0, 1) - 0.999).abs() < 1e-9);
        assert!((s.r_neg.get(0, 1) - 0.999).abs() < 1e-9);
    }

    #[test]
    fn single_annotator_panel() {
        let v = random_set(50, 1);
        let s = build_correlation_structure(&v, &["b".to_string()], 30).unwrap();
        assert_eq!(s.r_pos, CorrelationMatrix::identity(1));
        assert_eq!(s.r_neg, CorrelationMatrix::identity(1));
    }

    #[test]
    fn small_class_falls_back_to_pooled() {
        let v = random_set(60, 8); // 20 experts, 40 non-experts
        let s = build_correlation_structure(&v, v.panel(), 30).unwrap();
        let pooled = pairwise_matrix(&v, &[0, 1, 2], None).unwrap();
        assert_eq!(s.r_pos, pooled);
        assert_ne!(s.r_neg, pooled);
    }

    #[test]
    fn fused_confusion_edges() {
        let v = random_set(30, 2);
        let gold: Vec<f64> = v.records().iter().map(|r| f64::from(u8::from(r.gold.is_expert()))).collect();
        let d = fused_confusion(&v, &gold, 0.5).unwrap();
        assert_eq!((d.sensitivity, d.specificity), (1.0, 1.0));
        let d = fused_confusion(&v, &vec![0.0; 30], 0.5).unwrap();
        assert_eq!((d.sensitivity, d.specificity), (0.0, 1.0));
        assert!(fused_confusion(&v, &[0.1], 0.5).is_err());
    }
}
