use serde::{Deserialize, Serialize};

use super::{aod, confusion_with, di, eod, rates, spd, ConfusionCounts, PredictionSet, Rates};
use crate::dataset::{Cohort, Outcome};
use crate::error::{Error, Result};

/// Metrics for the ordered pair `group_a` vs `group_b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub group_a: String,
    pub group_b: String,
    pub spd: Option<f64>,
    pub eod: Option<f64>,
    pub aod: Option<f64>,
    pub di: Option<f64>,
    pub delta_fpr: Option<f64>,
}

/// Largest absolute value per metric over all pairs. For DI the aggregate is
/// the largest deviation from parity, `|DI - 1|`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MaxAbs {
    pub spd: Option<f64>,
    pub eod: Option<f64>,
    pub aod: Option<f64>,
    pub di_deviation: Option<f64>,
    pub delta_fpr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group: String,
    pub confusion: ConfusionCounts,
    pub rates: Rates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupPairTable {
    pub attribute: String,
    pub groups: Vec<GroupStats>,
    pub rows: Vec<PairRow>,
    pub max_abs: MaxAbs,
}

impl GroupPairTable {
    pub fn row(&self, a: &str, b: &str) -> Option<&PairRow> {
        self.rows.iter().find(|r| r.group_a == a && r.group_b == b)
    }
}

pub fn pairwise_table(
    cohort: &Cohort,
    preds: &PredictionSet,
    attribute: &str,
) -> Result<GroupPairTable> {
    pairwise_table_with(cohort, preds, attribute, Outcome::Successful)
}

/// One row per ordered pair of present groups.
pub fn pairwise_table_with(
    cohort: &Cohort,
    preds: &PredictionSet,
    attribute: &str,
    positive: Outcome,
) -> Result<GroupPairTable> {
    preds.check_aligned(cohort)?;
    let names = cohort.groups(attribute)?;
    if names.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "attribute `{attribute}` has {} populated group(s); pairwise metrics need at least 2",
            names.len()
        )));
    }
    let groups = names
        .into_iter()
        .map(|group| {
            let confusion = confusion_with(cohort, preds, attribute, &group, positive)?;
            Ok(GroupStats {
                rates: rates(&confusion),
                group,
                confusion,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(groups.len() * (groups.len() - 1));
    for a in &groups {
        for b in &groups {
            if a.group != b.group {
                rows.push(pair_row(a, b));
            }
        }
    }
    let max_abs = aggregate(&rows);
    Ok(GroupPairTable {
        attribute: attribute.to_string(),
        groups,
        rows,
        max_abs,
    })
}

fn pair_row(a: &GroupStats, b: &GroupStats) -> PairRow {
    let (ra, rb) = (&a.rates, &b.rates);
    let (pa, pb) = (ra.positive_rate, rb.positive_rate);
    PairRow {
        group_a: a.group.clone(),
        group_b: b.group.clone(),
        spd: pa.zip(pb).map(|(x, y)| spd(x, y)),
        eod: eod(ra.tpr, rb.tpr),
        aod: aod(ra.fpr, rb.fpr, ra.tpr, rb.tpr),
        di: pa.zip(pb).and_then(|(x, y)| di(x, y)),
        delta_fpr: ra.fpr.zip(rb.fpr).map(|(x, y)| x - y),
    }
}

fn max_abs_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    values.flatten().map(f64::abs).reduce(f64::max)
}

fn aggregate(rows: &[PairRow]) -> MaxAbs {
    MaxAbs {
        spd: max_abs_of(rows.iter().map(|r| r.spd)),
        eod: max_abs_of(rows.iter().map(|r| r.eod)),
        aod: max_abs_of(rows.iter().map(|r| r.aod)),
        di_deviation: max_abs_of(rows.iter().map(|r| r.di.map(|d| d - 1.0))),
        delta_fpr: max_abs_of(rows.iter().map(|r| r.delta_fpr)),
    }
}
