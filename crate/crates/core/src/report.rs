//! Full audits and their tabular renderings.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::amplification::{
    audit_amplification, conditional_tier_rate, AmplificationRecord, UpstreamMeasure,
};
use crate::config::Config;
use crate::dataset::{Cohort, Outcome};
use crate::error::{Error, Result};
use crate::metrics::calibration::bin_index;
use crate::metrics::{
    calibration_error, chi_square_independence, confusion_overall, confusion_with,
    pairwise_table_with, rates, CalibrationReport, ChiSquare, ConfusionCounts, GroupPairTable,
    GroupStats, PredictionSet, Rates,
};
use crate::tiering::{
    assign_tiers, compute_thresholds, tier_summary, tier_summary_for_group, Thresholds, Tier,
    TierAssignment, TierQuotas, TierSummary,
};

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    /// Unset unless the caller stamps the report; keeps reruns byte-identical.
    pub timestamp: Option<String>,
    pub seed: u64,
    /// `domestic`, `international`, or `pooled`.
    pub scope: String,
    pub config_digest: String,
    pub cohort_digest: String,
    pub n_records: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRate {
    pub group: String,
    pub n: u64,
    pub successes: u64,
    pub success_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineAttribute {
    pub attribute: String,
    pub groups: Vec<GroupRate>,
    /// Group × outcome independence test; absent when it cannot be computed.
    pub chi_square: Option<ChiSquare>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineSection {
    pub success_rate: f64,
    pub attributes: Vec<BaselineAttribute>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionAttribute {
    pub attribute: String,
    pub groups: Vec<GroupStats>,
    pub pairwise: Option<GroupPairTable>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSection {
    pub threshold: f64,
    pub positive_class: Outcome,
    pub confusion: ConfusionCounts,
    pub rates: Rates,
    pub calibration: CalibrationReport,
    pub attributes: Vec<PredictionAttribute>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierCalibration {
    pub tier: Tier,
    pub calibration: Option<CalibrationReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupTierSummary {
    pub attribute: String,
    pub group: String,
    pub summaries: Vec<TierSummary>,
}

/// Share of one `(group, outcome)` stratum placed in `tier`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalRate {
    pub attribute: String,
    pub group: String,
    pub outcome: Outcome,
    pub tier: Tier,
    pub rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub t_high: f64,
    pub t_medium: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierSection {
    pub quotas: TierQuotas,
    pub thresholds: Thresholds,
    pub degenerate: bool,
    pub summaries: Vec<TierSummary>,
    pub calibration: Vec<TierCalibration>,
    pub by_group: Vec<GroupTierSummary>,
    pub conditional_rates: Vec<ConditionalRate>,
    pub histogram: Histogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplificationSection {
    pub measure: UpstreamMeasure,
    pub records: Vec<AmplificationRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub metadata: Metadata,
    pub baseline: BaselineSection,
    pub prediction: PredictionSection,
    pub tiers: TierSection,
    pub amplification: AmplificationSection,
}

impl AuditReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<AuditReport> {
        Ok(serde_json::from_str(text)?)
    }
}

fn scope_of(cohort: &Cohort) -> String {
    let pops: BTreeSet<_> = cohort.records().iter().map(|r| r.population).collect();
    match pops.len() {
        1 => pops.first().expect("one population").to_string(),
        _ => "pooled".to_string(),
    }
}

/// Configured attributes; the population column is prepended when the cohort
/// mixes populations and it was not listed explicitly.
fn audit_attributes(cohort: &Cohort, config: &Config) -> Result<Vec<String>> {
    let mut attrs = config.attributes();
    let pop = &cohort.schema().population_column;
    if config.audit.attributes.is_empty() && scope_of(cohort) == "pooled" && !attrs.contains(pop) {
        attrs.insert(0, pop.clone());
    }
    for a in &attrs {
        if !cohort.has_attribute(a) {
            return Err(Error::UnknownAttribute(a.clone()));
        }
    }
    Ok(attrs)
}

/// Audits `preds` against `cohort`, tiering with the configured quotas.
pub fn run_audit(cohort: &Cohort, preds: &PredictionSet, config: &Config) -> Result<AuditReport> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    preds
        .check_aligned(cohort)
        .map_err(|e| e.in_stage("input"))?;
    let assign = assign_tiers(preds, &config.audit.quotas).map_err(|e| e.in_stage("tier"))?;
    run_audit_with_tiers(cohort, preds, &assign, config)
}

/// Audits with a precomputed tier assignment, e.g. one using thresholds fitted
/// on another prediction set.
pub fn run_audit_with_tiers(
    cohort: &Cohort,
    preds: &PredictionSet,
    assign: &TierAssignment,
    config: &Config,
) -> Result<AuditReport> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    preds
        .check_aligned(cohort)
        .map_err(|e| e.in_stage("input"))?;
    assign
        .check_aligned(cohort)
        .map_err(|e| e.in_stage("input"))?;
    if cohort.is_empty() {
        return Err(Error::InvalidInput("cohort is empty".into()).in_stage("input"));
    }
    let attrs = audit_attributes(cohort, config).map_err(|e| e.in_stage("input"))?;

    let metadata = Metadata {
        tool: TOOL.to_string(),
        version: VERSION.to_string(),
        timestamp: None,
        seed: config.seed,
        scope: scope_of(cohort),
        config_digest: config.digest(),
        cohort_digest: cohort.digest(),
        n_records: cohort.len() as u64,
    };
    Ok(AuditReport {
        metadata,
        baseline: baseline_section(cohort, &attrs).map_err(|e| e.in_stage("baseline"))?,
        prediction: prediction_section(cohort, preds, &attrs, config)
            .map_err(|e| e.in_stage("prediction"))?,
        tiers: tier_section(cohort, assign, &attrs, config).map_err(|e| e.in_stage("tier"))?,
        amplification: amplification_section(cohort, preds, assign, &attrs, config)
            .map_err(|e| e.in_stage("amplification"))?,
    })
}

fn baseline_section(cohort: &Cohort, attrs: &[String]) -> Result<BaselineSection> {
    let successes = cohort
        .records()
        .iter()
        .filter(|r| r.outcome.is_success())
        .count();
    let mut attributes = Vec::new();
    for attr in attrs {
        let groups: Vec<GroupRate> = cohort
            .groups(attr)?
            .into_iter()
            .map(|g| {
                let (mut n, mut s) = (0u64, 0u64);
                for r in cohort.records() {
                    if cohort.group_value(r, attr) == Some(g.as_str()) {
                        n += 1;
                        s += u64::from(r.outcome.is_success());
                    }
                }
                GroupRate {
                    group: g,
                    n,
                    successes: s,
                    success_rate: (n > 0).then(|| s as f64 / n as f64),
                }
            })
            .collect();
        let table: Vec<Vec<u64>> = groups
            .iter()
            .map(|g| vec![g.successes, g.n - g.successes])
            .collect();
        let (chi_square, note) = match chi_square_independence(&table) {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(format!("chi-square not computed: {e}"))),
        };
        attributes.push(BaselineAttribute {
            attribute: attr.clone(),
            groups,
            chi_square,
            note,
        });
    }
    Ok(BaselineSection {
        success_rate: successes as f64 / cohort.len() as f64,
        attributes,
    })
}

fn prediction_section(
    cohort: &Cohort,
    preds: &PredictionSet,
    attrs: &[String],
    config: &Config,
) -> Result<PredictionSection> {
    let positive = config.audit.positive_class;
    let confusion = confusion_overall(cohort, preds, positive)?;
    let outcomes: Vec<Outcome> = cohort.records().iter().map(|r| r.outcome).collect();
    let calibration = calibration_error(&preds.probs(), &outcomes, config.audit.ece_bins)?;
    let mut attributes = Vec::new();
    for attr in attrs {
        let groups = cohort
            .groups(attr)?
            .into_iter()
            .map(|g| {
                let c = confusion_with(cohort, preds, attr, &g, positive)?;
                Ok(GroupStats {
                    group: g,
                    confusion: c,
                    rates: rates(&c),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (pairwise, note) = if groups.len() < 2 {
            (
                None,
                Some(format!(
                    "only {} group(s) present; pairwise metrics undefined",
                    groups.len()
                )),
            )
        } else {
            (
                Some(pairwise_table_with(cohort, preds, attr, positive)?),
                None,
            )
        };
        attributes.push(PredictionAttribute {
            attribute: attr.clone(),
            groups,
            pairwise,
            note,
        });
    }
    Ok(PredictionSection {
        threshold: preds.threshold(),
        positive_class: positive,
        confusion,
        rates: rates(&confusion),
        calibration,
        attributes,
    })
}

fn tier_section(
    cohort: &Cohort,
    assign: &TierAssignment,
    attrs: &[String],
    config: &Config,
) -> Result<TierSection> {
    let calibration = Tier::ALL
        .iter()
        .map(|&tier| {
            let (probs, outcomes): (Vec<f64>, Vec<Outcome>) = assign
                .entries
                .iter()
                .zip(cohort.records())
                .filter(|(e, _)| e.tier == tier)
                .map(|(e, r)| (e.prob_success, r.outcome))
                .unzip();
            let calibration = if probs.is_empty() {
                None
            } else {
                Some(calibration_error(&probs, &outcomes, config.audit.ece_bins)?)
            };
            Ok(TierCalibration { tier, calibration })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut by_group = Vec::new();
    let mut conditional_rates = Vec::new();
    for attr in attrs {
        for group in cohort.groups(attr)? {
            by_group.push(GroupTierSummary {
                attribute: attr.clone(),
                group: group.clone(),
                summaries: tier_summary_for_group(assign, cohort, attr, &group)?,
            });
            for outcome in [Outcome::Unsuccessful, Outcome::Successful] {
                for tier in Tier::ALL {
                    conditional_rates.push(ConditionalRate {
                        attribute: attr.clone(),
                        group: group.clone(),
                        outcome,
                        tier,
                        rate: conditional_tier_rate(assign, cohort, tier, outcome, attr, &group)?,
                    });
                }
            }
        }
    }

    let probs: Vec<f64> = assign.entries.iter().map(|e| e.prob_success).collect();
    Ok(TierSection {
        quotas: config.audit.quotas,
        thresholds: assign.thresholds,
        degenerate: assign.is_degenerate(),
        summaries: tier_summary(assign, cohort)?,
        calibration,
        by_group,
        conditional_rates,
        histogram: histogram_of(&probs, config.audit.histogram_bins, assign.thresholds)?,
    })
}

fn amplification_section(
    cohort: &Cohort,
    preds: &PredictionSet,
    assign: &TierAssignment,
    attrs: &[String],
    config: &Config,
) -> Result<AmplificationSection> {
    let measure = config.audit.upstream_measure;
    let mut records = Vec::new();
    for attr in attrs {
        records.extend(audit_amplification(cohort, preds, assign, attr, measure)?);
    }
    Ok(AmplificationSection { measure, records })
}

/// Equal-width histogram of success probabilities over [0, 1], with the tier
/// thresholds those probabilities induce under `quotas`.
pub fn histogram_data(
    preds: &PredictionSet,
    n_bins: usize,
    quotas: &TierQuotas,
) -> Result<Histogram> {
    let probs = preds.probs();
    let thresholds = compute_thresholds(&probs, quotas)?;
    histogram_of(&probs, n_bins, thresholds)
}

fn histogram_of(probs: &[f64], n_bins: usize, thresholds: Thresholds) -> Result<Histogram> {
    if n_bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    if probs.is_empty() {
        return Err(Error::InvalidInput("histogram of no predictions".into()));
    }
    let mut counts = vec![0u64; n_bins];
    for &p in probs {
        counts[bin_index(p, n_bins)] += 1;
    }
    Ok(Histogram {
        edges: (0..=n_bins).map(|i| i as f64 / n_bins as f64).collect(),
        counts,
        t_high: thresholds.high,
        t_medium: thresholds.medium,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_markdown(&self) -> String {
        let mut out = format!("### {}\n\n| {} |\n", self.title, self.headers.join(" | "));
        out.push_str(&format!("|{}\n", "---|".repeat(self.headers.len())));
        for row in &self.rows {
            out.push_str(&format!("| {} |\n", row.join(" | ")));
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Four decimals, `n/a` for undefined values, and no negative zero.
pub fn fmt4(value: Option<f64>) -> String {
    match value {
        None => "n/a".to_string(),
        Some(v) => {
            let s = format!("{v:.4}");
            if s == "-0.0000" {
                "0.0000".to_string()
            } else {
                s
            }
        }
    }
}

/// FPR, FNR and F1 per group (attributes in report order), one column block
/// per report.
pub fn table_one(reports: &[&AuditReport]) -> Table {
    let mut headers = vec!["Attribute".to_string(), "Group".to_string()];
    for r in reports {
        for m in ["FPR", "FNR", "F1"] {
            headers.push(format!("{} {m}", r.metadata.scope));
        }
    }
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in reports {
        for a in &r.prediction.attributes {
            for g in &a.groups {
                let key = (a.attribute.clone(), g.group.clone());
                if !keys.contains(&key) {
                    keys.push(key);
                }
            }
        }
    }
    let rows = keys
        .into_iter()
        .map(|(attr, group)| {
            let mut row = vec![attr.clone(), group.clone()];
            for r in reports {
                let stats = r
                    .prediction
                    .attributes
                    .iter()
                    .find(|a| a.attribute == attr)
                    .and_then(|a| a.groups.iter().find(|g| g.group == group));
                let rates = stats.map(|s| s.rates);
                row.push(fmt4(rates.and_then(|r| r.fpr)));
                row.push(fmt4(rates.and_then(|r| r.fnr)));
                row.push(fmt4(rates.and_then(|r| r.f1)));
            }
            row
        })
        .collect();
    Table {
        title: "Model performance by group".into(),
        headers,
        rows,
    }
}

/// One SPD/EOD/AOD/DI table per attribute with at least two groups.
pub fn pairwise_tables(report: &AuditReport) -> Vec<Table> {
    report
        .prediction
        .attributes
        .iter()
        .filter_map(|a| a.pairwise.as_ref())
        .map(|t| Table {
            title: format!(
                "{} fairness metrics across {} ({})",
                report.metadata.scope, t.attribute, "all ordered pairs"
            ),
            headers: ["Pair", "SPD", "EOD", "AOD", "DI"]
                .map(String::from)
                .to_vec(),
            rows: t
                .rows
                .iter()
                .map(|r| {
                    vec![
                        format!("{} vs {}", r.group_a, r.group_b),
                        fmt4(r.spd),
                        fmt4(r.eod),
                        fmt4(r.aod),
                        fmt4(r.di),
                    ]
                })
                .collect(),
        })
        .collect()
}

/// Accuracy of the tier-implied outcome per group and tier.
pub fn tier_accuracy_table(report: &AuditReport) -> Table {
    let mut headers = vec!["Attribute".to_string(), "Group".to_string()];
    headers.extend(Tier::ALL.iter().map(|t| format!("{t} accuracy")));
    let rows = report
        .tiers
        .by_group
        .iter()
        .map(|g| {
            let mut row = vec![g.attribute.clone(), g.group.clone()];
            row.extend(g.summaries.iter().map(|s| fmt4(s.accuracy)));
            row
        })
        .collect();
    Table {
        title: format!("{} accuracy by tier", report.metadata.scope),
        headers,
        rows,
    }
}

pub fn tier_table(report: &AuditReport) -> Table {
    let rows = report
        .tiers
        .summaries
        .iter()
        .zip(&report.tiers.calibration)
        .map(|(s, c)| {
            vec![
                s.tier.to_string(),
                s.count.to_string(),
                fmt4(s.success_rate),
                fmt4(s.mean_prob),
                fmt4(s.brier),
                fmt4(c.calibration.as_ref().map(|c| c.ece)),
            ]
        })
        .collect();
    Table {
        title: format!(
            "{} tiers (t_high {}, t_medium {})",
            report.metadata.scope,
            fmt4(Some(report.tiers.thresholds.high)),
            fmt4(Some(report.tiers.thresholds.medium))
        ),
        headers: ["Tier", "Count", "Success rate", "Mean prob", "Brier", "ECE"]
            .map(String::from)
            .to_vec(),
        rows,
    }
}

pub fn amplification_table(report: &AuditReport) -> Table {
    let rows = report
        .amplification
        .records
        .iter()
        .map(|r| {
            vec![
                r.attribute.clone(),
                format!("{} vs {}", r.group_a, r.group_b),
                fmt4(r.upstream.gap),
                fmt4(r.downstream.gap),
                fmt4(r.gap_delta),
                fmt4(r.ratio_of_ratios),
                r.amplified.map_or("n/a".into(), |a| a.to_string()),
            ]
        })
        .collect();
    Table {
        title: format!("{} amplification", report.metadata.scope),
        headers: [
            "Attribute",
            "Pair",
            "Prediction gap",
            "Tier gap",
            "Gap change",
            "Ratio of ratios",
            "Amplified",
        ]
        .map(String::from)
        .to_vec(),
        rows,
    }
}

pub fn histogram_table(report: &AuditReport) -> Table {
    let h = &report.tiers.histogram;
    Table {
        title: format!("{} predicted success probabilities", report.metadata.scope),
        headers: ["lower", "upper", "count"].map(String::from).to_vec(),
        rows: h
            .counts
            .iter()
            .enumerate()
            .map(|(i, c)| {
                vec![
                    h.edges[i].to_string(),
                    h.edges[i + 1].to_string(),
                    c.to_string(),
                ]
            })
            .collect(),
    }
}

/// Markdown rendering of every table for a set of reports.
pub fn render_markdown(reports: &[&AuditReport]) -> String {
    let mut out = String::from("# Fairness audit\n\n");
    for r in reports {
        let m = &r.metadata;
        out.push_str(&format!(
            "- {}: {} records, seed {}, cohort {}\n",
            m.scope,
            m.n_records,
            m.seed,
            &m.cohort_digest[..12.min(m.cohort_digest.len())]
        ));
    }
    out.push('\n');
    for r in reports {
        let mut base = Table {
            title: format!("{} baseline success rates", r.metadata.scope),
            headers: ["Attribute", "Group", "n", "Success rate", "chi-square", "p"]
                .map(String::from)
                .to_vec(),
            rows: Vec::new(),
        };
        for a in &r.baseline.attributes {
            for g in &a.groups {
                base.rows.push(vec![
                    a.attribute.clone(),
                    g.group.clone(),
                    g.n.to_string(),
                    fmt4(g.success_rate),
                    fmt4(a.chi_square.map(|c| c.statistic)),
                    a.chi_square
                        .map_or("n/a".into(), |c| format!("{:.4e}", c.p_value)),
                ]);
            }
        }
        out.push_str(&base.to_markdown());
        out.push('\n');
    }
    out.push_str(&table_one(reports).to_markdown());
    out.push('\n');
    for r in reports {
        for t in pairwise_tables(r) {
            out.push_str(&t.to_markdown());
            out.push('\n');
        }
        for t in [
            tier_table(r),
            tier_accuracy_table(r),
            amplification_table(r),
        ] {
            out.push_str(&t.to_markdown());
            out.push('\n');
        }
        for a in &r.prediction.attributes {
            if let Some(note) = &a.note {
                out.push_str(&format!("- {}: {note}\n", a.attribute));
            }
        }
    }
    out
}
