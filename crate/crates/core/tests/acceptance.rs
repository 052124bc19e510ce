//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::f64::consts::PI;
use std::fs;
use std::time::{Duration, Instant};

use probitfuse::bootstrap::{classify, default_priors, Category, OrgType, SizeBand};
use probitfuse::calibration::{diagnostic_metrics, tetrachoric, AnnotatorProfile, CorrelationStructure};
use probitfuse::cli::{cmd_estimate, cmd_simulate, EstimateArgs, RunArgs, SimulateArgs};
use probitfuse::inference::{posterior_prob, Qmc};
use probitfuse::numerics::{bvn_cdf, mvn_orthant_prob, CorrelationMatrix, OrthantSpec, Side};
use probitfuse::pattern::{Annotation, AnnotationPattern};
use probitfuse::synthetic::{adjust_headcount_draws, copula_generate, AggregateCounts, SyntheticConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Unit-diagonal Gram matrix of random unit vectors in `n + 1` dimensions.
fn random_correlation(n: usize, rng: &mut ChaCha8Rng) -> CorrelationMatrix {
    let vecs: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..n + 1).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 1.0 } else { vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum() })
                .collect()
        })
        .collect();
    CorrelationMatrix::from_rows(&rows).unwrap()
}

fn orthant_completeness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for m in 0..20 {
        let dim = 2 + m % 5;
        let corr = random_correlation(dim, &mut rng);
        let thresholds: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let mut total = 0.0;
        for signs in 0..1u32 << dim {
            let sides = (0..dim).map(|i| if signs >> i & 1 == 1 { Side::Above } else { Side::Below }).collect();
            total += mvn_orthant_prob(&OrthantSpec::new(thresholds.clone(), sides), &corr, 1000 + m as u64).unwrap();
        }
        let err = (total - 1.0).abs();
        let tol = f64::from(1u32 << dim) * 1e-3;
        worst = worst.max(err / tol);
        if err > tol {
            failures.push(format!("matrix {m} (dim {dim}): |sum - 1| = {err:.2e} > {tol:.1e}"));
        }
    }
    let elapsed = start.elapsed();
    let fast = elapsed < Duration::from_secs(60);
    outcome(
        failures.is_empty() && fast,
        format!(
            "20 matrices, dims 2-6, worst error/tolerance {worst:.3}, {:.1}s (limit 60s){}",
            elapsed.as_secs_f64(),
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn closed_forms() -> Outcome {
    let mut worst_bvn = 0.0f64;
    for rho in [-0.9, -0.3, 0.0, 0.5, 0.9] {
        let exact = 0.25 + f64::asin(rho) / (2.0 * PI);
        worst_bvn = worst_bvn.max((bvn_cdf(0.0, 0.0, rho) - exact).abs());
    }
    let mut worst_tri = 0.0f64;
    for rho in [-0.4, 0.0, 0.3, 0.5, 0.9] {
        let exact = 0.125 + 3.0 * f64::asin(rho) / (4.0 * PI);
        let corr = CorrelationMatrix::equicorrelated(3, rho).unwrap();
        let spec = OrthantSpec::new(vec![0.0; 3], vec![Side::Below; 3]);
        worst_tri = worst_tri.max((mvn_orthant_prob(&spec, &corr, 3).unwrap() - exact).abs());
    }
    outcome(
        worst_bvn <= 1e-6 && worst_tri <= 1e-3,
        format!("bivariate max error {worst_bvn:.2e} (tol 1e-6), trivariate max error {worst_tri:.2e} (tol 1e-3)"),
    )
}

fn tetrachoric_roundtrip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut parts = Vec::new();
    let mut pass = true;
    for rho in [-0.5, 0.0, 0.3, 0.8] {
        let (h, k) = (0.4, -0.3);
        let mut t = [[0.0; 2]; 2];
        for _ in 0..20_000 {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let x = z1;
            let y = rho * z1 + (1.0 - rho * rho).sqrt() * z2;
            t[usize::from(x <= h)][usize::from(y <= k)] += 1.0;
        }
        let est = tetrachoric(t).unwrap();
        pass &= (est - rho).abs() <= 0.05;
        parts.push(format!("{rho:+.1}->{est:+.3}"));
    }
    outcome(pass, format!("n = 20000, {} (tol 0.05)", parts.join(", ")))
}

fn independence_reduction() -> Outcome {
    let rates = [(0.79, 0.93), (0.6, 0.95), (0.7, 0.88), (0.85, 0.9), (0.55, 0.97), (0.9, 0.8)];
    let profiles: Vec<AnnotatorProfile> = rates
        .iter()
        .enumerate()
        .map(|(i, &(se, sp))| AnnotatorProfile::new(format!("a{i}"), se, sp).unwrap())
        .collect();
    let structure = CorrelationStructure::independent(profiles.iter().map(|p| p.annotator_id.clone()).collect());
    let prevalence = 0.05;
    let mut worst = 0.0f64;
    for bits in 0..64u32 {
        let pattern = AnnotationPattern((0..6).map(|i| Annotation::from_bool(bits >> i & 1 == 1)).collect());
        let (mut l1, mut l0) = (1.0, 1.0);
        for (i, &(se, sp)) in rates.iter().enumerate() {
            let positive = bits >> i & 1 == 1;
            l1 *= if positive { se } else { 1.0 - se };
            l0 *= if positive { 1.0 - sp } else { sp };
        }
        let exact = prevalence * l1 / (prevalence * l1 + (1.0 - prevalence) * l0);
        let got = posterior_prob(&pattern, prevalence, &profiles, &structure, Qmc::new(9)).unwrap();
        worst = worst.max((got - exact).abs());
    }
    outcome(worst <= 1e-6, format!("64 patterns, max |posterior - closed form| {worst:.2e} (tol 1e-6)"))
}

fn reference_diagnostics() -> Outcome {
    let (tp, fn_, tn, fp) = (121u64, 32u64, 400u64, 32u64);
    let profile =
        AnnotatorProfile::new("fused", tp as f64 / (tp + fn_) as f64, tn as f64 / (tn + fp) as f64).unwrap();
    let d = diagnostic_metrics(&profile, tp + fn_, tn + fp).unwrap();
    let pass = (d.sensitivity - 0.791).abs() <= 0.005
        && (d.specificity - 0.926).abs() <= 0.005
        && (d.accuracy - 0.891).abs() <= 0.005
        && (10.4..=11.0).contains(&d.lr_pos)
        && (d.lr_neg - 0.23).abs() <= 0.01;
    outcome(
        pass,
        format!(
            "sensitivity {:.4}, specificity {:.4}, accuracy {:.4}, LR+ {:.3}, LR- {:.4}",
            d.sensitivity, d.specificity, d.accuracy, d.lr_pos, d.lr_neg
        ),
    )
}

fn priors_fidelity() -> Outcome {
    use OrgType::{ConsultingOrMl, NonMl};
    let table = [
        (ConsultingOrMl, SizeBand::Lt100, 2.4, 21.7, 0.10),
        (ConsultingOrMl, SizeBand::From100To1k, 3.0, 57.0, 0.05),
        (ConsultingOrMl, SizeBand::From1kTo10k, 1.6, 154.8, 0.01),
        (ConsultingOrMl, SizeBand::Gte10k, 1.0, 999.0, 0.001),
        (NonMl, SizeBand::All, 1.0, 9999.0, 0.0001),
        (OrgType::Unknown, SizeBand::Unknown, 1.6, 154.8, 0.01),
    ];
    let priors = default_priors();
    let exact = priors.len() == table.len()
        && table.iter().all(|&(o, s, a, b, _)| {
            priors.iter().any(|p| p.org_type == o && p.size_band == s && p.alpha == a && p.beta == b)
        });
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for &(o, s, _, _, mean) in &table {
        let p = priors.iter().find(|p| p.org_type == o && p.size_band == s).unwrap();
        let sampled = (0..100_000).map(|_| p.sample(&mut rng)).sum::<f64>() / 100_000.0;
        worst = worst.max((sampled - mean).abs() / mean);
    }
    outcome(
        exact && worst <= 0.10,
        format!("six rows exact: {exact}; worst relative error of sampled mean vs table mean {worst:.4} (tol 0.10)"),
    )
}

fn copula_fidelity() -> Outcome {
    let panel: Vec<String> = ["kw_a", "kw_b", "kw_c"].iter().map(|s| s.to_string()).collect();
    let rows = vec![vec![1.0, 0.4, 0.2], vec![0.4, 1.0, 0.6], vec![0.2, 0.6, 1.0]];
    let mut structure = CorrelationStructure::independent(panel.clone());
    structure.r_neg = CorrelationMatrix::from_rows(&rows).unwrap();
    let total = 10_000u64;
    let targets = [0.05, 0.2, 0.5];
    let counts = panel.iter().zip(targets).map(|(id, p)| (id.clone(), (p * total as f64) as u64)).collect();
    let agg = AggregateCounts::new("copula-check", total, counts).unwrap();
    let patterns = copula_generate(&agg, &structure, 10_000, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let positive = |p: &AnnotationPattern, i: usize| p.get(i) == Annotation::Positive;
    let mut worst_marginal = 0.0f64;
    for (i, &target) in targets.iter().enumerate() {
        let rate = patterns.iter().filter(|p| positive(p, i)).count() as f64 / patterns.len() as f64;
        worst_marginal = worst_marginal.max((rate - target).abs());
    }
    let mut worst_rho = 0.0f64;
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let mut t = [[0.0; 2]; 2];
        for p in &patterns {
            t[usize::from(!positive(p, i))][usize::from(!positive(p, j))] += 1.0;
        }
        worst_rho = worst_rho.max((tetrachoric(t).unwrap() - rows[i][j]).abs());
    }
    outcome(
        worst_marginal <= 0.01 && worst_rho <= 0.1,
        format!("max marginal error {worst_marginal:.4} (tol 0.01), max tetrachoric error {worst_rho:.3} (tol 0.1)"),
    )
}

fn classification_fidelity() -> Outcome {
    let cases = [
        ((1, 9, 26), Category::Probable, "Probable"),
        ((0, 2, 5), Category::Possible, "Possible"),
        ((0, 0, 2), Category::NonZero, "Non-zero"),
        ((0, 0, 0), Category::NotDetected, "Not Detected"),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for ((a, b, c), want, label) in cases {
        let got = classify(a, b, c).unwrap();
        pass &= got == want && got.to_string() == label;
        parts.push(format!("({a},{b},{c})->{got}"));
    }
    outcome(pass, parts.join(", "))
}

fn end_to_end_calibration() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scoreboard.csv");
    let args = SimulateArgs {
        scenario: None,
        run: RunArgs {
            iterations: 200,
            accuracy: 1e-3,
            min_class_count: 30,
            out: out.clone(),
        },
    };
    let start = Instant::now();
    let board = cmd_simulate(&args, 2024).unwrap();
    let elapsed = start.elapsed();
    let written = fs::read_to_string(&out).unwrap();
    let rows = written.lines().filter(|l| l.starts_with("sim-")).count();
    let acc = &board.accuracy;
    let best_individual = acc.individual.iter().map(|(_, a)| *a).fold(0.0, f64::max);
    let pass = board.coverage >= 0.7
        && acc.fused_beats_all()
        && acc.individual.len() == 6
        && rows == 40
        && elapsed < Duration::from_secs(300);
    outcome(
        pass,
        format!(
            "40 companies, coverage {:.3} (min 0.70), fused accuracy {:.4} vs best annotator {:.4}, {:.1}s (limit 300s)",
            board.coverage,
            acc.fused_accuracy,
            best_individual,
            elapsed.as_secs_f64()
        ),
    )
}

fn synthetic_adjustment() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let raw: Vec<u64> = (0..1000).map(|_| rng.gen_range(0..60)).collect();
    let adjusted = adjust_headcount_draws(&raw, &SyntheticConfig::default());
    let q50 = |v: &[u64]| {
        let mut s = v.to_vec();
        s.sort_unstable();
        s[(50 * s.len()).div_ceil(100) - 1]
    };
    let (raw_q50, adj_q50) = (q50(&raw), q50(&adjusted));
    let expected = (0.5 * raw_q50 as f64).round() as u64;
    outcome(
        adj_q50.abs_diff(expected) <= 1,
        format!("raw q50 {raw_q50}, adjusted q50 {adj_q50}, round(0.5 x raw) {expected} (tol 1)"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let files = common::write_fixture(dir.path(), 11);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let args = EstimateArgs {
            validation: files.validation.clone(),
            companies: Some(files.companies.clone()),
            aggregates: Some(files.aggregates.clone()),
            priors: None,
            org_types: vec!["consulting_or_ml".into()],
            size_bands: vec![],
            adjustment: 0.5,
            ratio_limit: 3.0,
            llm_annotators: None,
            run: RunArgs {
                iterations: 100,
                accuracy: 1e-3,
                min_class_count: 30,
                out: out.clone(),
            },
        };
        cmd_estimate(&args, 99).unwrap();
        fs::read(out).unwrap()
    };
    let (a, b) = (run("first.csv"), run("second.csv"));
    let rows = String::from_utf8_lossy(&a).lines().count();
    outcome(a == b, format!("two runs, {} bytes, {rows} lines, identical: {}", a.len(), a == b))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("orthant completeness", orthant_completeness),
        ("closed-form checks", closed_forms),
        ("tetrachoric roundtrip", tetrachoric_roundtrip),
        ("independence reduction", independence_reduction),
        ("reference diagnostics", reference_diagnostics),
        ("priors fidelity", priors_fidelity),
        ("copula fidelity", copula_fidelity),
        ("classification fidelity", classification_fidelity),
        ("end-to-end calibration", end_to_end_calibration),
        ("synthetic adjustment", synthetic_adjustment),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("[{}] criterion {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, k + 1, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
