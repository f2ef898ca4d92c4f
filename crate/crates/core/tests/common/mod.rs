//! Independent oracles and the acceptance checks built on them.
//!
//! Oracles work on plain vectors (group index, outcome flag, probability) and
//! never call the library code they check.
#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskaudit::amplification::{
    audit_amplification, conditional_tier_rate, Stage, StageDisparity, Support, UpstreamMeasure,
};
use riskaudit::dataset::{
    chronological_split, Cohort, GroupColumn, Outcome, Population, Record, Schema, SplitSpec,
};
use riskaudit::metrics::{
    brier, calibration_error, chi_square_independence, confusion, pairwise_table, rates,
    rates_from_spd_di, PredictionSet,
};
use riskaudit::model::{smote, DesignMatrix, ScorerParams};
use riskaudit::synth::{generate_cohort, synth_scores, SynthSpec, GENDER};
use riskaudit::tiering::{assign_tiers, tier_summary, Tier, TierQuotas};

pub type Check = Result<String, String>;
pub type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub const TOL: f64 = 1e-12;

/// A random audit case kept as raw vectors alongside the library types.
pub struct Case {
    pub groups: Vec<usize>,
    pub success: Vec<bool>,
    pub probs: Vec<f64>,
    pub n_groups: usize,
    pub cohort: Cohort,
    pub preds: PredictionSet,
}

pub fn group_name(g: usize) -> String {
    format!("g{g}")
}

pub fn group_schema() -> Schema {
    Schema {
        id_column: "id".into(),
        term_column: "term".into(),
        population_column: "population".into(),
        outcome_column: "outcome".into(),
        positive_outcome: "successful".into(),
        negative_outcome: "unsuccessful".into(),
        group_attributes: vec![GroupColumn {
            name: "grp".into(),
            levels: vec![],
        }],
        features: vec![],
    }
}

pub fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let n = rng.random_range(10..=500);
    let n_groups = rng.random_range(2..=5);
    let mut groups: Vec<usize> = (0..n).map(|_| rng.random_range(0..n_groups)).collect();
    // every group present
    for (g, slot) in groups.iter_mut().take(n_groups).enumerate() {
        *slot = g;
    }
    let success: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
    let probs: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random_bool(0.2) {
                // exact bin edges and the decision threshold
                rng.random_range(0..=10) as f64 / 10.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    let records = (0..n)
        .map(|i| Record {
            id: format!("r{i:04}"),
            term_index: i as u32,
            population: Population::Domestic,
            groups: BTreeMap::from([("grp".to_string(), group_name(groups[i]))]),
            features: BTreeMap::new(),
            outcome: if success[i] {
                Outcome::Successful
            } else {
                Outcome::Unsuccessful
            },
        })
        .collect();
    let cohort = Cohort::new(group_schema(), records).expect("valid cohort");
    let preds = PredictionSet::from_probs(cohort.ids(), &probs, 0.5).expect("valid preds");
    Case {
        groups,
        success,
        probs,
        n_groups,
        cohort,
        preds,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OracleRates {
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub tpr: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
    pub selection: Option<f64>,
}

fn frac(a: usize, b: usize) -> Option<f64> {
    if b == 0 {
        None
    } else {
        Some(a as f64 / b as f64)
    }
}

pub fn oracle_rates(case: &Case, group: usize) -> OracleRates {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for i in 0..case.probs.len() {
        if case.groups[i] != group {
            continue;
        }
        let predicted = case.probs[i] >= 0.5;
        match (case.success[i], predicted) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fn_ += 1,
        }
    }
    OracleRates {
        fpr: frac(fp, fp + tn),
        fnr: frac(fn_, fn_ + tp),
        tpr: frac(tp, tp + fn_),
        f1: frac(2 * tp, 2 * tp + fp + fn_),
        accuracy: frac(tp + tn, tp + fp + tn + fn_),
        selection: frac(tp + fp, tp + fp + tn + fn_),
    }
}

pub fn oracle_brier(probs: &[f64], success: &[bool]) -> f64 {
    let mut s = 0.0;
    for (p, y) in probs.iter().zip(success) {
        let t = if *y { 1.0 } else { 0.0 };
        s += (p - t) * (p - t);
    }
    s / probs.len() as f64
}

pub fn oracle_ece(probs: &[f64], success: &[bool], n_bins: usize) -> f64 {
    let mut total = 0.0;
    for b in 0..n_bins {
        let lo = b as f64 / n_bins as f64;
        let hi = (b + 1) as f64 / n_bins as f64;
        let members: Vec<usize> = (0..probs.len())
            .filter(|&i| probs[i] >= lo && (probs[i] < hi || (b + 1 == n_bins && probs[i] <= 1.0)))
            .collect();
        if members.is_empty() {
            continue;
        }
        let m = members.iter().map(|&i| probs[i]).sum::<f64>() / members.len() as f64;
        let f = members.iter().filter(|&&i| success[i]).count() as f64 / members.len() as f64;
        total += members.len() as f64 * (m - f).abs();
    }
    total / probs.len() as f64
}

/// Smallest value `v` with at least `q * n` values `<= v`.
pub fn oracle_quantile(probs: &[f64], q: f64) -> f64 {
    let need = q * probs.len() as f64 - 1e-9;
    let mut candidates = probs.to_vec();
    candidates.sort_by(f64::total_cmp);
    for v in candidates.iter() {
        let at_or_below = probs.iter().filter(|p| *p <= v).count() as f64;
        if at_or_below >= need {
            return *v;
        }
    }
    *candidates.last().unwrap()
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= TOL,
        _ => false,
    }
}

/// Checks one case against the counting oracles; returns the number of values compared.
pub fn compare_case(case: &Case) -> Result<usize, String> {
    let mut compared = 0;
    let table = pairwise_table(&case.cohort, &case.preds, "grp").map_err(|e| e.to_string())?;
    let oracle: Vec<OracleRates> = (0..case.n_groups).map(|g| oracle_rates(case, g)).collect();
    for g in 0..case.n_groups {
        let name = group_name(g);
        let c = confusion(&case.cohort, &case.preds, "grp", &name).map_err(|e| e.to_string())?;
        let r = rates(&c);
        let o = oracle[g];
        for (label, got, want) in [
            ("fpr", r.fpr, o.fpr),
            ("fnr", r.fnr, o.fnr),
            ("f1", r.f1, o.f1),
            ("accuracy", r.accuracy, o.accuracy),
        ] {
            ensure!(
                close(got, want),
                "{label} of {name}: {got:?} vs oracle {want:?}"
            );
            compared += 1;
        }
    }
    for a in 0..case.n_groups {
        for b in 0..case.n_groups {
            if a == b {
                continue;
            }
            let (oa, ob) = (oracle[a], oracle[b]);
            let row = table
                .row(&group_name(a), &group_name(b))
                .ok_or("missing pair row")?;
            let spd = oa.selection.zip(ob.selection).map(|(x, y)| x - y);
            let eod = oa.tpr.zip(ob.tpr).map(|(x, y)| x - y);
            let aod = match (oa.fpr, ob.fpr, oa.tpr, ob.tpr) {
                (Some(fa), Some(fb), Some(ta), Some(tb)) => Some(((fa - fb) + (ta - tb)) / 2.0),
                _ => None,
            };
            let di = match (oa.selection, ob.selection) {
                (Some(x), Some(y)) if y != 0.0 => Some(x / y),
                _ => None,
            };
            for (label, got, want) in [
                ("spd", row.spd, spd),
                ("eod", row.eod, eod),
                ("aod", row.aod, aod),
                ("di", row.di, di),
            ] {
                ensure!(
                    close(got, want),
                    "{label} g{a} vs g{b}: {got:?} vs oracle {want:?}"
                );
                compared += 1;
            }
        }
    }

    let outcomes: Vec<Outcome> = case.cohort.records().iter().map(|r| r.outcome).collect();
    let b = brier(&case.probs, &outcomes).map_err(|e| e.to_string())?;
    let ob = oracle_brier(&case.probs, &case.success);
    ensure!((b - ob).abs() <= TOL, "brier {b} vs oracle {ob}");
    let cal = calibration_error(&case.probs, &outcomes, 10).map_err(|e| e.to_string())?;
    let oe = oracle_ece(&case.probs, &case.success, 10);
    ensure!(
        (cal.ece - oe).abs() <= TOL,
        "ece {} vs oracle {oe}",
        cal.ece
    );
    compared += 2;

    let assign = assign_tiers(&case.preds, &TierQuotas::default()).map_err(|e| e.to_string())?;
    let t_high = oracle_quantile(&case.probs, 0.23);
    let t_medium = oracle_quantile(&case.probs, 0.50);
    ensure!(
        assign.thresholds.high == t_high && assign.thresholds.medium == t_medium,
        "thresholds {:?} vs oracle ({t_high}, {t_medium})",
        assign.thresholds
    );
    for g in 0..case.n_groups {
        for outcome in [Outcome::Successful, Outcome::Unsuccessful] {
            for tier in Tier::ALL {
                let got = conditional_tier_rate(
                    &assign,
                    &case.cohort,
                    tier,
                    outcome,
                    "grp",
                    &group_name(g),
                )
                .map_err(|e| e.to_string())?;
                let stratum: Vec<usize> = (0..case.probs.len())
                    .filter(|&i| case.groups[i] == g && case.success[i] == outcome.is_success())
                    .collect();
                let hits = stratum
                    .iter()
                    .filter(|&&i| {
                        let p = case.probs[i];
                        let t = if p <= t_high {
                            Tier::High
                        } else if p <= t_medium {
                            Tier::Medium
                        } else {
                            Tier::Low
                        };
                        t == tier
                    })
                    .count();
                let want = frac(hits, stratum.len());
                ensure!(
                    close(got, want),
                    "P({tier} | {outcome}, g{g}) {got:?} vs oracle {want:?}"
                );
                compared += 1;
            }
        }
    }
    Ok(compared)
}

pub fn criterion_metric_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xFA1);
    let mut compared = 0;
    for i in 0..50 {
        let case = random_case(&mut rng);
        compared += compare_case(&case).map_err(|e| format!("cohort {i}: {e}"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.2}s");
    Ok(format!(
        "50 cohorts, {compared} values within {TOL:e}, {secs:.2}s"
    ))
}

pub struct ReportedPair {
    pub population: String,
    pub pair: String,
    pub spd: f64,
    pub di: f64,
}

pub fn reported_pairs() -> Vec<ReportedPair> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/reported_age_pairs.csv");
    let mut rd = csv::Reader::from_path(path).expect("fixture present");
    rd.records()
        .map(|r| {
            let r = r.expect("fixture row");
            ReportedPair {
                population: r[0].to_string(),
                pair: r[1].to_string(),
                spd: r[2].parse().unwrap(),
                di: r[5].parse().unwrap(),
            }
        })
        .collect()
}

pub fn criterion_reported_pairs() -> Check {
    let pairs = reported_pairs();
    ensure!(pairs.len() == 17, "fixture has {} rows", pairs.len());
    let mut worst: f64 = 0.0;
    for p in &pairs {
        let (a, b) = rates_from_spd_di(p.spd, p.di)
            .ok_or_else(|| format!("{} {}: DI of 1 cannot be back-solved", p.population, p.pair))?;
        // slack for round-off in the division only
        let unit = -1e-12..=1.0 + 1e-12;
        ensure!(
            unit.contains(&a) && unit.contains(&b),
            "{} {}: back-solved rates {a}, {b} outside [0, 1]",
            p.population,
            p.pair
        );
        // recompute from rates rounded as they would be printed
        let (ra, rb) = ((a * 1e4).round() / 1e4, (b * 1e4).round() / 1e4);
        let spd_err = ((ra - rb) - p.spd).abs();
        let di_err = (ra / rb - p.di).abs();
        ensure!(
            spd_err <= 5e-3 && di_err <= 5e-3,
            "{} {}: recomputed SPD off by {spd_err}, DI off by {di_err}",
            p.population,
            p.pair
        );
        worst = worst.max(spd_err).max(di_err);
    }
    Ok(format!(
        "17 rows back-solve into [0, 1], worst recompute error {worst:.2e}"
    ))
}

pub fn tier_counts(probs: &[f64]) -> Result<[usize; 3], String> {
    let ids: Vec<String> = (0..probs.len()).map(|i| format!("p{i}")).collect();
    let preds = PredictionSet::from_probs(ids, probs, 0.5).map_err(|e| e.to_string())?;
    let assign = assign_tiers(&preds, &TierQuotas::default()).map_err(|e| e.to_string())?;
    Ok([
        assign.count(Tier::High),
        assign.count(Tier::Medium),
        assign.count(Tier::Low),
    ])
}

pub fn distinct_probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
    v
}

pub fn criterion_tier_quotas() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let counts = tier_counts(&distinct_probs(&mut rng, 10_000))?;
    ensure!(counts == [2300, 2700, 5000], "n = 10000 gives {counts:?}");
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=2000);
        let probs: Vec<f64> = distinct_probs(&mut rng, n)
            .into_iter()
            .map(|p| p * rng.random_range(0.5..1.0))
            .collect();
        let mut sorted = probs.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        if sorted.len() != n {
            continue;
        }
        let c = tier_counts(&probs)?;
        for (count, quota) in c.iter().zip([0.23, 0.27, 0.50]) {
            let dev = (*count as f64 / n as f64 - quota).abs();
            ensure!(
                dev <= 1.0 / n as f64 + 1e-12,
                "n = {n}: counts {c:?} deviate by {dev}"
            );
            worst = worst.max(dev * n as f64);
        }
    }
    Ok(format!(
        "10000 -> {counts:?}; 100 random inputs within {worst:.3}/n"
    ))
}

pub fn criterion_chi_square() -> Check {
    let c = chi_square_independence(&[vec![20, 10], vec![10, 20]]).map_err(|e| e.to_string())?;
    ensure!(
        (c.statistic - 6.6667).abs() <= 1e-4,
        "statistic {}",
        c.statistic
    );
    ensure!((c.p_value - 0.00982).abs() <= 1e-4, "p {}", c.p_value);
    let s = chi_square_independence(&[vec![15, 15], vec![15, 15]]).map_err(|e| e.to_string())?;
    ensure!(
        s.statistic == 0.0 && s.p_value == 1.0,
        "symmetric table gives {s:?}"
    );

    let cohort = generate_cohort(&SynthSpec::calibrated(1, 2847)).map_err(|e| e.to_string())?;
    let mut table = vec![vec![0u64; 2]; 2];
    for r in cohort.records() {
        let row = usize::from(r.population == Population::International);
        table[row][usize::from(!r.outcome.is_success())] += 1;
    }
    let rate = |row: &Vec<u64>| row[0] as f64 / (row[0] + row[1]) as f64;
    let pop = chi_square_independence(&table).map_err(|e| e.to_string())?;
    ensure!(
        pop.statistic > 1000.0 && pop.p_value < 0.001,
        "population test {pop:?}"
    );
    Ok(format!(
        "6.6667/{:.5}; symmetric 0/1; synthetic {} records ({:.3} vs {:.3}) chi2 {:.1}, p {:.1e}",
        c.p_value,
        cohort.len(),
        rate(&table[0]),
        rate(&table[1]),
        pop.statistic,
        pop.p_value
    ))
}

pub fn preset_scores() -> Result<(Cohort, PredictionSet), String> {
    let spec = SynthSpec::default();
    let cohort = generate_cohort(&spec).map_err(|e| e.to_string())?;
    let preds = synth_scores(&cohort, &spec, 0.5).map_err(|e| e.to_string())?;
    Ok((cohort, preds))
}

pub fn criterion_amplification() -> Check {
    let (cohort, preds) = preset_scores()?;
    let assign = assign_tiers(&preds, &TierQuotas::default()).map_err(|e| e.to_string())?;
    let records = audit_amplification(
        &cohort,
        &preds,
        &assign,
        GENDER,
        UpstreamMeasure::FlaggedRate,
    )
    .map_err(|e| e.to_string())?;
    let r = records
        .iter()
        .find(|r| r.group_a == "female" && r.group_b == "male")
        .ok_or("no female vs male record")?;
    let (up, down) = (
        r.upstream.gap.ok_or("undefined upstream gap")?,
        r.downstream.gap.ok_or("undefined tier gap")?,
    );
    ensure!(
        r.amplified == Some(true) && down < 0.0,
        "prediction gap {up:.4}, High-tier gap {down:.4}, amplified {:?}",
        r.amplified
    );

    let fixture = StageDisparity::from_counts(
        Stage::Tier,
        GENDER,
        ("male", "female"),
        "P(high tier | unsuccessful)",
        Support {
            hits_a: 74,
            n_a: 100,
            hits_b: 63,
            n_b: 100,
        },
    );
    let gap = fixture.gap.ok_or("fixture gap undefined")?;
    ensure!((gap - 0.11).abs() < 1e-12, "fixture gap {gap}");
    Ok(format!(
        "unsuccessful female vs male: predicted-unsuccessful gap {up:.4} -> High-tier gap {down:.4}; fixture gap {gap:.2}"
    ))
}

pub fn criterion_tier_calibration() -> Check {
    let (cohort, preds) = preset_scores()?;
    let assign = assign_tiers(&preds, &TierQuotas::default()).map_err(|e| e.to_string())?;
    let s = tier_summary(&assign, &cohort).map_err(|e| e.to_string())?;
    let get = |t: Tier| s.iter().find(|x| x.tier == t).and_then(|x| x.brier);
    let (medium, low) = (
        get(Tier::Medium).ok_or("empty Medium tier")?,
        get(Tier::Low).ok_or("empty Low tier")?,
    );
    ensure!(
        medium > low,
        "Medium Brier {medium:.4} <= Low Brier {low:.4}"
    );
    Ok(format!("Medium Brier {medium:.4} > Low Brier {low:.4}"))
}

pub fn random_matrix(
    rng: &mut ChaCha8Rng,
    n: usize,
    d: usize,
    positive_share: f64,
) -> DesignMatrix {
    let ids = (0..n).map(|i| format!("r{i}")).collect();
    let names = (0..d).map(|j| format!("x{j}")).collect();
    let rows = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let labels = (0..n).map(|_| rng.random_bool(positive_share)).collect();
    DesignMatrix::new(ids, names, rows, labels).expect("valid matrix")
}

pub fn criterion_gradient_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for draw in 0..20 {
        let d = rng.random_range(1..=6);
        let n = rng.random_range(5..60);
        let m = random_matrix(&mut rng, n, d, 0.5);
        let params = ScorerParams {
            feature_names: m.feature_names().to_vec(),
            weights: (0..d).map(|_| rng.random_range(-1.5..1.5)).collect(),
            intercept: rng.random_range(-1.0..1.0),
            l2: [0.0, 1e-3, 0.1, 1.0][draw % 4],
            ..ScorerParams::default()
        };
        let (_, analytic) = params.loss_and_gradient(&m);
        let h = 1e-5;
        let mut numeric = Vec::with_capacity(d + 1);
        for j in 0..=d {
            let nudge = |delta: f64| {
                let mut p = params.clone();
                if j < d {
                    p.weights[j] += delta;
                } else {
                    p.intercept += delta;
                }
                p.loss(&m)
            };
            numeric.push((nudge(h) - nudge(-h)) / (2.0 * h));
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt()
            + numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = if scale == 0.0 { 0.0 } else { diff / scale };
        ensure!(rel < 1e-5, "draw {draw}: relative error {rel:e}");
        worst = worst.max(rel);
    }
    Ok(format!("20 draws, worst relative error {worst:.2e}"))
}

/// Every minority point within the k-th smallest distance of `seed` (ties included).
fn exhaustive_neighbors(points: &[Vec<f64>], seed: usize, k: usize) -> Vec<usize> {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut d: Vec<f64> = (0..points.len())
        .filter(|&j| j != seed)
        .map(|j| dist(&points[seed], &points[j]))
        .collect();
    d.sort_by(f64::total_cmp);
    let kth = d[k - 1];
    (0..points.len())
        .filter(|&j| j != seed && dist(&points[seed], &points[j]) <= kth)
        .collect()
}

fn on_segment(x: &[f64], a: &[f64], b: &[f64]) -> bool {
    let ab: f64 = a.iter().zip(b).map(|(p, q)| (q - p) * (q - p)).sum();
    if ab == 0.0 {
        return x.iter().zip(a).all(|(p, q)| (p - q).abs() < 1e-9);
    }
    let u: f64 = x
        .iter()
        .zip(a)
        .zip(b)
        .map(|((xi, ai), bi)| (xi - ai) * (bi - ai))
        .sum::<f64>()
        / ab;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return false;
    }
    x.iter()
        .zip(a)
        .zip(b)
        .all(|((xi, ai), bi)| (ai + u * (bi - ai) - xi).abs() < 1e-9)
}

pub fn criterion_smote() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut synthetic = 0;
    for round in 0..10 {
        let n = rng.random_range(30..200);
        let d = rng.random_range(1..5);
        let k = rng.random_range(1..=5);
        let m = random_matrix(&mut rng, n, d, 0.25);
        let (neg, pos) = m.class_counts();
        if pos < k + 1 {
            continue;
        }
        let seed = rng.random();
        let out = smote(&m, k, seed).map_err(|e| e.to_string())?;
        ensure!(
            out.class_counts() == (neg, neg),
            "round {round}: counts {:?}",
            out.class_counts()
        );
        ensure!(
            out == smote(&m, k, seed).map_err(|e| e.to_string())?,
            "round {round}: not deterministic"
        );
        let minority: Vec<usize> = (0..n).filter(|&i| m.labels()[i]).collect();
        let points: Vec<Vec<f64>> = minority.iter().map(|&i| m.row(i).to_vec()).collect();
        for i in n..out.n_rows() {
            let id = &out.ids()[i];
            let origin = id.split('~').next().unwrap();
            let s = minority
                .iter()
                .position(|&j| m.ids()[j] == origin)
                .ok_or_else(|| format!("synthetic id {id} has no minority origin"))?;
            let hit = exhaustive_neighbors(&points, s, k)
                .iter()
                .any(|&nn| on_segment(out.row(i), &points[s], &points[nn]));
            ensure!(
                hit,
                "round {round}: {id} is not on a segment to one of its {k} nearest neighbours"
            );
            ensure!(
                out.labels()[i],
                "round {round}: {id} has the majority label"
            );
            synthetic += 1;
        }
    }
    ensure!(synthetic > 0, "no synthetic rows checked");
    Ok(format!(
        "{synthetic} synthetic rows on seed-to-neighbour segments, balanced, deterministic"
    ))
}

pub fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_riskaudit"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "riskaudit {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

pub fn run_pipeline(dir: &Path, seed: u64) -> Result<(), String> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let out = dir.to_string_lossy().into_owned();
    let seed = seed.to_string();
    let common = ["--seed", seed.as_str(), "--out-dir", out.as_str()];
    let with = |head: Vec<String>| -> Vec<String> {
        head.into_iter()
            .chain(common.iter().map(|s| s.to_string()))
            .collect()
    };
    let steps: Vec<Vec<String>> = vec![
        with(vec!["synth".into()]),
        with(vec!["split".into(), "--cohort".into(), p("cohort.csv")]),
        with(vec!["train".into(), "--train".into(), p("train.csv")]),
        with(vec![
            "score".into(),
            "--model".into(),
            p("model.json"),
            "--cohort".into(),
            p("test.csv"),
        ]),
        with(vec![
            "tier".into(),
            "--predictions".into(),
            p("predictions.csv"),
        ]),
        with(vec![
            "audit".into(),
            "--cohort".into(),
            p("test.csv"),
            "--predictions".into(),
            p("predictions.csv"),
            "--tiers".into(),
            p("tiers.csv"),
        ]),
        with(vec!["report".into(), "--audit".into(), p("audit.json")]),
    ];
    for step in steps {
        let args: Vec<&str> = step.iter().map(String::as_str).collect();
        run_cli(&args)?;
    }
    Ok(())
}

pub fn criterion_end_to_end() -> Check {
    let start = Instant::now();
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_pipeline(a.path(), 17)?;
    run_pipeline(b.path(), 17)?;
    let secs = start.elapsed().as_secs_f64();
    for name in [
        "audit.json",
        "report.md",
        "predictions.csv",
        "tiers.csv",
        "model.json",
    ] {
        let x = std::fs::read(a.path().join(name)).map_err(|e| format!("{name}: {e}"))?;
        let y = std::fs::read(b.path().join(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure!(x == y, "{name} differs between runs");
    }
    ensure!(secs < 60.0, "two pipeline runs took {secs:.1}s");
    Ok(format!(
        "two runs byte-identical (audit.json, report.md, ...), {secs:.1}s total"
    ))
}

pub fn criterion_split() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut terms: Vec<u32> = (0..1000).collect();
    for i in (1..terms.len()).rev() {
        terms.swap(i, rng.random_range(0..=i));
    }
    let records = terms
        .iter()
        .enumerate()
        .map(|(i, &t)| Record {
            id: format!("s{i:04}"),
            term_index: t,
            population: Population::Domestic,
            groups: BTreeMap::from([("grp".to_string(), "g0".to_string())]),
            features: BTreeMap::new(),
            outcome: Outcome::Successful,
        })
        .collect();
    let cohort = Cohort::new(group_schema(), records).map_err(|e| e.to_string())?;
    for (train, val) in [(0.7, 0.15), (0.6, 0.2), (0.333, 0.333), (1.0, 0.0)] {
        let spec = SplitSpec::new(train, val, 1.0 - train - val).map_err(|e| e.to_string())?;
        let (tr, va, te) = chronological_split(&cohort, &spec).map_err(|e| e.to_string())?;
        let want_train = (1000.0 * train + 1e-9).floor() as usize;
        let want_val = (1000.0 * val + 1e-9).floor() as usize;
        ensure!(
            tr.len() == want_train
                && va.len() == want_val
                && te.len() == 1000 - want_train - want_val,
            "{train}/{val}: sizes {}/{}/{}",
            tr.len(),
            va.len(),
            te.len()
        );
        let max = |c: &Cohort| c.records().iter().map(|r| r.term_index).max();
        let min = |c: &Cohort| c.records().iter().map(|r| r.term_index).min();
        if let (Some(a), Some(b)) = (max(&tr), min(&va)) {
            ensure!(a < b, "train term {a} not before validation term {b}");
        }
        if let (Some(a), Some(b)) = (max(&tr).max(max(&va)), min(&te)) {
            ensure!(a < b, "term {a} not before test term {b}");
        }
    }
    Ok("700/150/150 plus three other fractions; every train term precedes every test term".into())
}

pub fn criteria() -> Vec<Criterion> {
    vec![
        ("metric oracle equivalence", criterion_metric_oracle),
        (
            "reported pair self-consistency",
            criterion_reported_pairs,
        ),
        ("tiering quotas", criterion_tier_quotas),
        ("chi-square", criterion_chi_square),
        ("amplification reproduction", criterion_amplification),
        ("calibration by tier", criterion_tier_calibration),
        ("gradient check", criterion_gradient_check),
        ("SMOTE properties", criterion_smote),
        ("end-to-end determinism", criterion_end_to_end),
        ("split correctness", criterion_split),
    ]
}
