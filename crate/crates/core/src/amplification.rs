//! Compares between-group disparities at the prediction stage with the same
//! disparities after percentile tiering.
//!
//! For each group pair the upstream and downstream measures are computed on
//! exactly the same records (the stratum selected by the measure), so any
//! change in the gap comes from the tiering step alone.

use serde::{Deserialize, Serialize};

use crate::dataset::{Cohort, Outcome};
use crate::error::{Error, Result};
use crate::metrics::{two_proportion_test, PredictionSet};
use crate::tiering::{Tier, TierAssignment};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Baseline,
    Prediction,
    Tier,
}

/// Which prediction-stage rate is compared against which tier-stage rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpstreamMeasure {
    /// P(predicted unsuccessful | unsuccessful) vs P(High | unsuccessful).
    #[default]
    FlaggedRate,
    /// P(predicted successful | unsuccessful) vs P(not High | unsuccessful).
    FalsePositiveRate,
    /// Accuracy of the binary prediction vs accuracy of the tier-implied outcome.
    Accuracy,
}

impl UpstreamMeasure {
    fn names(self) -> (&'static str, &'static str) {
        match self {
            UpstreamMeasure::FlaggedRate => (
                "P(predicted unsuccessful | unsuccessful)",
                "P(high tier | unsuccessful)",
            ),
            UpstreamMeasure::FalsePositiveRate => (
                "P(predicted successful | unsuccessful)",
                "P(not high tier | unsuccessful)",
            ),
            UpstreamMeasure::Accuracy => ("prediction accuracy", "tier-implied accuracy"),
        }
    }

    fn in_stratum(self, outcome: Outcome) -> bool {
        match self {
            UpstreamMeasure::FlaggedRate | UpstreamMeasure::FalsePositiveRate => {
                outcome == Outcome::Unsuccessful
            }
            UpstreamMeasure::Accuracy => true,
        }
    }

    fn upstream_hit(self, outcome: Outcome, predicted: Outcome) -> bool {
        match self {
            UpstreamMeasure::FlaggedRate => predicted == Outcome::Unsuccessful,
            UpstreamMeasure::FalsePositiveRate => predicted == Outcome::Successful,
            UpstreamMeasure::Accuracy => predicted == outcome,
        }
    }

    fn downstream_hit(self, outcome: Outcome, tier: Tier) -> bool {
        match self {
            UpstreamMeasure::FlaggedRate => tier == Tier::High,
            UpstreamMeasure::FalsePositiveRate => tier != Tier::High,
            UpstreamMeasure::Accuracy => tier.implied_outcome() == outcome,
        }
    }
}

/// Event counts behind a pair of rates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Support {
    pub hits_a: u64,
    pub n_a: u64,
    pub hits_b: u64,
    pub n_b: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageDisparity {
    pub stage: Stage,
    pub attribute: String,
    pub group_a: String,
    pub group_b: String,
    pub measure: String,
    pub value_a: Option<f64>,
    pub value_b: Option<f64>,
    pub gap: Option<f64>,
    pub ratio: Option<f64>,
    pub support: Option<Support>,
    /// Two-sided two-proportion test of `value_a` vs `value_b`.
    pub p_value: Option<f64>,
}

impl StageDisparity {
    pub fn from_values(
        stage: Stage,
        attribute: &str,
        pair: (&str, &str),
        measure: &str,
        value_a: Option<f64>,
        value_b: Option<f64>,
    ) -> StageDisparity {
        let gap = value_a.zip(value_b).map(|(a, b)| a - b);
        let ratio = value_a
            .zip(value_b)
            .and_then(|(a, b)| (b != 0.0).then(|| a / b));
        StageDisparity {
            stage,
            attribute: attribute.to_string(),
            group_a: pair.0.to_string(),
            group_b: pair.1.to_string(),
            measure: measure.to_string(),
            value_a,
            value_b,
            gap,
            ratio,
            support: None,
            p_value: None,
        }
    }

    pub fn from_counts(
        stage: Stage,
        attribute: &str,
        pair: (&str, &str),
        measure: &str,
        support: Support,
    ) -> StageDisparity {
        let rate = |k: u64, n: u64| (n > 0).then(|| k as f64 / n as f64);
        let mut d = StageDisparity::from_values(
            stage,
            attribute,
            pair,
            measure,
            rate(support.hits_a, support.n_a),
            rate(support.hits_b, support.n_b),
        );
        d.p_value = two_proportion_test(support.hits_a, support.n_a, support.hits_b, support.n_b)
            .ok()
            .map(|t| t.p_value);
        d.support = Some(support);
        d
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplificationRecord {
    pub attribute: String,
    pub group_a: String,
    pub group_b: String,
    pub upstream: StageDisparity,
    pub downstream: StageDisparity,
    pub gap_delta: Option<f64>,
    pub ratio_of_ratios: Option<f64>,
    /// `|downstream gap| > |upstream gap|`; undefined when either gap is.
    pub amplified: Option<bool>,
}

pub fn stage_comparison(
    upstream: StageDisparity,
    downstream: StageDisparity,
) -> Result<AmplificationRecord> {
    if upstream.attribute != downstream.attribute
        || upstream.group_a != downstream.group_a
        || upstream.group_b != downstream.group_b
    {
        return Err(Error::InvalidInput(format!(
            "cannot compare {}:{} vs {} with {}:{} vs {}",
            upstream.attribute,
            upstream.group_a,
            upstream.group_b,
            downstream.attribute,
            downstream.group_a,
            downstream.group_b
        )));
    }
    let gaps = upstream.gap.zip(downstream.gap);
    Ok(AmplificationRecord {
        attribute: upstream.attribute.clone(),
        group_a: upstream.group_a.clone(),
        group_b: upstream.group_b.clone(),
        gap_delta: gaps.map(|(u, d)| d - u),
        ratio_of_ratios: upstream
            .ratio
            .zip(downstream.ratio)
            .and_then(|(u, d)| (u != 0.0).then(|| d / u)),
        amplified: gaps.map(|(u, d)| d.abs() > u.abs()),
        upstream,
        downstream,
    })
}

/// Share of the `(outcome, attribute = value)` stratum assigned to `tier`;
/// `None` for an empty stratum.
pub fn conditional_tier_rate(
    assign: &TierAssignment,
    cohort: &Cohort,
    tier: Tier,
    outcome: Outcome,
    attribute: &str,
    value: &str,
) -> Result<Option<f64>> {
    assign.check_aligned(cohort)?;
    cohort.check_group(attribute, value)?;
    let (mut hits, mut n) = (0u64, 0u64);
    for (entry, record) in assign.entries.iter().zip(cohort.records()) {
        if record.outcome == outcome && cohort.group_value(record, attribute) == Some(value) {
            n += 1;
            hits += u64::from(entry.tier == tier);
        }
    }
    Ok((n > 0).then(|| hits as f64 / n as f64))
}

/// Positions of the records that enter both stages of `measure` for one group.
pub fn stratum(
    cohort: &Cohort,
    attribute: &str,
    value: &str,
    measure: UpstreamMeasure,
) -> Vec<usize> {
    cohort
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            measure.in_stratum(r.outcome) && cohort.group_value(r, attribute) == Some(value)
        })
        .map(|(i, _)| i)
        .collect()
}

/// One record per unordered group pair, in group order.
pub fn audit_amplification(
    cohort: &Cohort,
    preds: &PredictionSet,
    assign: &TierAssignment,
    attribute: &str,
    measure: UpstreamMeasure,
) -> Result<Vec<AmplificationRecord>> {
    preds.check_aligned(cohort)?;
    assign.check_aligned(cohort)?;
    let groups = cohort.groups(attribute)?;
    let (up_name, down_name) = measure.names();

    // (upstream hits, downstream hits, stratum size) per group
    let counts: Vec<(u64, u64, u64)> = groups
        .iter()
        .map(|g| {
            let rows = stratum(cohort, attribute, g, measure);
            let mut up = 0;
            let mut down = 0;
            for &i in &rows {
                let outcome = cohort.records()[i].outcome;
                up += u64::from(measure.upstream_hit(outcome, preds.entries()[i].label));
                down += u64::from(measure.downstream_hit(outcome, assign.entries[i].tier));
            }
            (up, down, rows.len() as u64)
        })
        .collect();

    let mut out = Vec::new();
    for a in 0..groups.len() {
        for b in a + 1..groups.len() {
            let pair = (groups[a].as_str(), groups[b].as_str());
            let (ua, da, na) = counts[a];
            let (ub, db, nb) = counts[b];
            let upstream = StageDisparity::from_counts(
                Stage::Prediction,
                attribute,
                pair,
                up_name,
                Support {
                    hits_a: ua,
                    n_a: na,
                    hits_b: ub,
                    n_b: nb,
                },
            );
            let downstream = StageDisparity::from_counts(
                Stage::Tier,
                attribute,
                pair,
                down_name,
                Support {
                    hits_a: da,
                    n_a: na,
                    hits_b: db,
                    n_b: nb,
                },
            );
            out.push(stage_comparison(upstream, downstream)?);
        }
    }
    Ok(out)
}
