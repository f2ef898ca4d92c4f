//! Percentile post-processing: predicted success probabilities are cut into
//! High / Medium / Low risk tiers by fixed quotas.
//!
//! Thresholds are nearest-rank order statistics, so each threshold is the
//! score of an actual record. A record whose probability equals a threshold
//! falls into the riskier tier.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Cohort, Outcome};
use crate::error::{Error, Result};
use crate::metrics::{brier, PredictionSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    High,
    Medium,
    Low,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::High, Tier::Medium, Tier::Low];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::High => "high",
            Tier::Medium => "medium",
            Tier::Low => "low",
        }
    }

    /// Outcome a tier implies when it is read as a prediction: High means
    /// expected to be unsuccessful, Medium and Low expected to succeed.
    pub fn implied_outcome(self) -> Outcome {
        match self {
            Tier::High => Outcome::Unsuccessful,
            Tier::Medium | Tier::Low => Outcome::Successful,
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Tier> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" => Ok(Tier::High),
            "medium" => Ok(Tier::Medium),
            "low" => Ok(Tier::Low),
            other => Err(Error::InvalidInput(format!("unknown tier `{other}`"))),
        }
    }
}

/// Share of records per tier, counted from the riskiest (lowest scores) up.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierQuotas {
    pub high: f64,
    pub medium: f64,
    pub low: f64,
}

impl Default for TierQuotas {
    fn default() -> Self {
        TierQuotas {
            high: 0.23,
            medium: 0.27,
            low: 0.50,
        }
    }
}

impl TierQuotas {
    pub fn new(high: f64, medium: f64, low: f64) -> Result<TierQuotas> {
        let q = TierQuotas { high, medium, low };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.high, self.medium, self.low];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config(format!(
                "tier quotas must lie in [0, 1], got {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "tier quotas must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Probabilities at or below this are High risk.
    pub high: f64,
    /// Probabilities above `high` and at or below this are Medium risk.
    pub medium: f64,
}

impl Thresholds {
    pub fn tier_of(&self, prob: f64) -> Tier {
        if prob <= self.high {
            Tier::High
        } else if prob <= self.medium {
            Tier::Medium
        } else {
            Tier::Low
        }
    }
}

/// 1-based nearest rank `ceil(n * q)`, clamped to `[1, n]`.
fn nearest_rank(n: usize, q: f64) -> usize {
    ((n as f64 * q - 1e-9).ceil() as usize).clamp(1, n)
}

pub fn compute_thresholds(probs: &[f64], quotas: &TierQuotas) -> Result<Thresholds> {
    quotas.validate()?;
    if probs.is_empty() {
        return Err(Error::InvalidInput(
            "cannot compute tier thresholds from no predictions".into(),
        ));
    }
    if probs.iter().any(|p| p.is_nan()) {
        return Err(Error::InvalidInput("probabilities contain NaN".into()));
    }
    let mut sorted = probs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(Thresholds {
        high: sorted[nearest_rank(n, quotas.high) - 1],
        medium: sorted[nearest_rank(n, quotas.high + quotas.medium) - 1],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierEntry {
    pub id: String,
    pub prob_success: f64,
    pub tier: Tier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierAssignment {
    pub thresholds: Thresholds,
    pub entries: Vec<TierEntry>,
}

impl TierAssignment {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, tier: Tier) -> usize {
        self.entries.iter().filter(|e| e.tier == tier).count()
    }

    /// All records share one probability, so every record is High risk.
    pub fn is_degenerate(&self) -> bool {
        self.thresholds.high == self.thresholds.medium && self.count(Tier::High) == self.len()
    }

    pub fn check_aligned(&self, cohort: &Cohort) -> Result<()> {
        if self.len() != cohort.len() {
            return Err(Error::Misaligned(format!(
                "{} tier entries for {} records",
                self.len(),
                cohort.len()
            )));
        }
        for (e, id) in self.entries.iter().zip(cohort.ids()) {
            if e.id != id {
                return Err(Error::Misaligned(format!(
                    "tier entry `{}` vs record `{id}`",
                    e.id
                )));
            }
        }
        Ok(())
    }
}

pub fn assign_tiers(preds: &PredictionSet, quotas: &TierQuotas) -> Result<TierAssignment> {
    let thresholds = compute_thresholds(&preds.probs(), quotas)?;
    Ok(assign_with_thresholds(preds, thresholds))
}

/// Applies fixed thresholds, e.g. ones computed on a different prediction set.
pub fn assign_with_thresholds(preds: &PredictionSet, thresholds: Thresholds) -> TierAssignment {
    let entries = preds
        .entries()
        .iter()
        .map(|e| TierEntry {
            id: e.id.clone(),
            prob_success: e.prob_success,
            tier: thresholds.tier_of(e.prob_success),
        })
        .collect();
    TierAssignment {
        thresholds,
        entries,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierSummary {
    pub tier: Tier,
    pub count: u64,
    pub success_rate: Option<f64>,
    pub mean_prob: Option<f64>,
    pub brier: Option<f64>,
    /// Agreement between the tier-implied outcome and the actual outcome.
    pub accuracy: Option<f64>,
}

pub fn tier_summary(assign: &TierAssignment, cohort: &Cohort) -> Result<Vec<TierSummary>> {
    summarize(assign, cohort, |_| true)
}

/// Tier summaries restricted to records where `attribute == value`.
pub fn tier_summary_for_group(
    assign: &TierAssignment,
    cohort: &Cohort,
    attribute: &str,
    value: &str,
) -> Result<Vec<TierSummary>> {
    cohort.check_group(attribute, value)?;
    summarize(assign, cohort, |i| {
        cohort.group_value(&cohort.records()[i], attribute) == Some(value)
    })
}

fn summarize(
    assign: &TierAssignment,
    cohort: &Cohort,
    keep: impl Fn(usize) -> bool,
) -> Result<Vec<TierSummary>> {
    assign.check_aligned(cohort)?;
    Tier::ALL
        .iter()
        .map(|&tier| {
            let (probs, outcomes): (Vec<f64>, Vec<Outcome>) = assign
                .entries
                .iter()
                .zip(cohort.records())
                .enumerate()
                .filter(|(i, (e, _))| e.tier == tier && keep(*i))
                .map(|(_, (e, r))| (e.prob_success, r.outcome))
                .unzip();
            let n = probs.len();
            if n == 0 {
                return Ok(TierSummary {
                    tier,
                    count: 0,
                    success_rate: None,
                    mean_prob: None,
                    brier: None,
                    accuracy: None,
                });
            }
            let successes = outcomes.iter().filter(|o| o.is_success()).count();
            let correct = outcomes
                .iter()
                .filter(|&&o| o == tier.implied_outcome())
                .count();
            Ok(TierSummary {
                tier,
                count: n as u64,
                success_rate: Some(successes as f64 / n as f64),
                mean_prob: Some(probs.iter().sum::<f64>() / n as f64),
                brier: Some(brier(&probs, &outcomes)?),
                accuracy: Some(correct as f64 / n as f64),
            })
        })
        .collect()
}

pub fn save_tiers(assign: &TierAssignment, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_tiers(assign, std::io::BufWriter::new(file))
}

/// `id,prob_success,tier,t_high,t_medium`, thresholds repeated on every row.
pub fn write_tiers<W: Write>(assign: &TierAssignment, writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["id", "prob_success", "tier", "t_high", "t_medium"])?;
    let (th, tm) = (
        assign.thresholds.high.to_string(),
        assign.thresholds.medium.to_string(),
    );
    for e in &assign.entries {
        csv.write_record([
            e.id.as_str(),
            &e.prob_success.to_string(),
            e.tier.as_str(),
            &th,
            &tm,
        ])?;
    }
    csv.flush().map_err(|e| Error::io("<tiers csv>", e))?;
    Ok(())
}

pub fn load_tiers(path: &Path) -> Result<TierAssignment> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_tiers(file)
}

pub fn read_tiers<R: Read>(reader: R) -> Result<TierAssignment> {
    #[derive(Deserialize)]
    struct Row {
        id: String,
        prob_success: f64,
        tier: String,
        t_high: f64,
        t_medium: f64,
    }
    let mut csv = csv::Reader::from_reader(reader);
    let mut thresholds: Option<Thresholds> = None;
    let mut entries = Vec::new();
    for row in csv.deserialize::<Row>() {
        let row = row?;
        let t = Thresholds {
            high: row.t_high,
            medium: row.t_medium,
        };
        match thresholds {
            None => thresholds = Some(t),
            Some(prev) if prev != t => {
                return Err(Error::InvalidInput(format!(
                    "record `{}` carries different thresholds than earlier rows",
                    row.id
                )))
            }
            _ => {}
        }
        entries.push(TierEntry {
            id: row.id,
            prob_success: row.prob_success,
            tier: row.tier.parse()?,
        });
    }
    let thresholds =
        thresholds.ok_or_else(|| Error::InvalidInput("tiers file has no rows".into()))?;
    Ok(TierAssignment {
        thresholds,
        entries,
    })
}
