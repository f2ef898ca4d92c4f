//! Group fairness and performance metrics.
//!
//! Rates that would divide by zero are reported as `None` rather than 0, so a
//! group with no negatives (or no positives) never looks perfectly fair.

pub(crate) mod calibration;
mod chisq;
mod pairwise;
mod predictions;

pub use calibration::{brier, calibration_error, CalibrationBin, CalibrationReport};
pub use chisq::{
    chi_square_independence, chi_square_sf, ln_gamma, regularized_gamma_p, regularized_gamma_q,
    two_proportion_test, ChiSquare, TwoProportion,
};
pub use pairwise::{
    pairwise_table, pairwise_table_with, GroupPairTable, GroupStats, MaxAbs, PairRow,
};
pub use predictions::{
    label_for, load_predictions, read_predictions, save_predictions, write_predictions, Prediction,
    PredictionSet, DEFAULT_THRESHOLD,
};

use serde::{Deserialize, Serialize};

use crate::dataset::{Cohort, Outcome, Record};
use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, actual: Outcome, predicted: Outcome, positive: Outcome) {
        match (actual == positive, predicted == positive) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    /// Share of the group predicted positive.
    pub positive_rate: Option<f64>,
}

pub fn rates(c: &ConfusionCounts) -> Rates {
    Rates {
        fpr: ratio(c.fp, c.fp + c.tn),
        fnr: ratio(c.fn_, c.fn_ + c.tp),
        tpr: ratio(c.tp, c.tp + c.fn_),
        tnr: ratio(c.tn, c.fp + c.tn),
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision: ratio(c.tp, c.tp + c.fp),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        positive_rate: ratio(c.tp + c.fp, c.total()),
    }
}

/// Confusion counts over the records where `attribute == value`, positive class successful.
pub fn confusion(
    cohort: &Cohort,
    preds: &PredictionSet,
    attribute: &str,
    value: &str,
) -> Result<ConfusionCounts> {
    confusion_with(cohort, preds, attribute, value, Outcome::Successful)
}

pub fn confusion_with(
    cohort: &Cohort,
    preds: &PredictionSet,
    attribute: &str,
    value: &str,
    positive: Outcome,
) -> Result<ConfusionCounts> {
    preds.check_aligned(cohort)?;
    cohort.check_group(attribute, value)?;
    Ok(tally(cohort, preds, positive, |r| {
        cohort.group_value(r, attribute) == Some(value)
    }))
}

/// Confusion counts over the whole cohort.
pub fn confusion_overall(
    cohort: &Cohort,
    preds: &PredictionSet,
    positive: Outcome,
) -> Result<ConfusionCounts> {
    preds.check_aligned(cohort)?;
    Ok(tally(cohort, preds, positive, |_| true))
}

fn tally(
    cohort: &Cohort,
    preds: &PredictionSet,
    positive: Outcome,
    keep: impl Fn(&Record) -> bool,
) -> ConfusionCounts {
    let mut counts = ConfusionCounts::default();
    for (record, pred) in cohort.records().iter().zip(preds.entries()) {
        if keep(record) {
            counts.add(record.outcome, pred.label, positive);
        }
    }
    counts
}

/// Statistical parity difference: `rate_a - rate_b` of positive predictions.
pub fn spd(rate_a: f64, rate_b: f64) -> f64 {
    rate_a - rate_b
}

/// Equal opportunity difference of true positive rates.
pub fn eod(tpr_a: Option<f64>, tpr_b: Option<f64>) -> Option<f64> {
    Some(tpr_a? - tpr_b?)
}

/// Average odds difference: the mean of the FPR gap and the TPR gap.
pub fn aod(
    fpr_a: Option<f64>,
    fpr_b: Option<f64>,
    tpr_a: Option<f64>,
    tpr_b: Option<f64>,
) -> Option<f64> {
    Some(((fpr_a? - fpr_b?) + (tpr_a? - tpr_b?)) / 2.0)
}

/// Disparate impact ratio; undefined when the reference rate is zero.
pub fn di(rate_a: f64, rate_b: f64) -> Option<f64> {
    (rate_b > 0.0).then(|| rate_a / rate_b)
}

/// Recovers the two positive-prediction rates `(rate_a, rate_b)` behind a
/// reported `(SPD, DI)` pair, using `rate_b = SPD / (DI - 1)` and
/// `rate_a = DI * rate_b`. Undefined when `DI == 1`.
pub fn rates_from_spd_di(spd: f64, di: f64) -> Option<(f64, f64)> {
    if (di - 1.0).abs() < f64::EPSILON {
        return None;
    }
    let rate_b = spd / (di - 1.0);
    Some((di * rate_b, rate_b))
}
