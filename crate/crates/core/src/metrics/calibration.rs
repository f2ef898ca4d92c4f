use serde::{Deserialize, Serialize};

use crate::dataset::Outcome;
use crate::error::{Error, Result};

fn check_inputs(probs: &[f64], outcomes: &[Outcome]) -> Result<()> {
    if probs.len() != outcomes.len() {
        return Err(Error::Misaligned(format!(
            "{} probabilities for {} outcomes",
            probs.len(),
            outcomes.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::InvalidInput(
            "calibration needs at least one prediction".into(),
        ));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidInput(format!(
            "probability {p} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Mean squared gap between predicted success probability and the 0/1 outcome.
pub fn brier(probs: &[f64], outcomes: &[Outcome]) -> Result<f64> {
    check_inputs(probs, outcomes)?;
    let sum: f64 = probs
        .iter()
        .zip(outcomes)
        .map(|(p, o)| (p - o.indicator()).powi(2))
        .sum();
    Ok(sum / probs.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
    pub mean_prob: Option<f64>,
    pub frequency: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
    pub brier: f64,
    pub n: u64,
}

/// Bin `i` covers `[i/n, (i+1)/n)`, the last bin also includes 1.0.
pub(crate) fn bin_index(p: f64, n_bins: usize) -> usize {
    let edge = |i: usize| i as f64 / n_bins as f64;
    let mut b = ((p * n_bins as f64).floor() as usize).min(n_bins - 1);
    // snap to the exact edge comparison when p*n rounds across a boundary
    if b > 0 && p < edge(b) {
        b -= 1;
    } else if b + 1 < n_bins && p >= edge(b + 1) {
        b += 1;
    }
    b
}

/// Expected calibration error over `n_bins` equal-width bins on [0, 1]:
/// the count-weighted mean of `|mean_prob - frequency|` over non-empty bins.
pub fn calibration_error(
    probs: &[f64],
    outcomes: &[Outcome],
    n_bins: usize,
) -> Result<CalibrationReport> {
    if n_bins == 0 {
        return Err(Error::Config("calibration needs at least one bin".into()));
    }
    check_inputs(probs, outcomes)?;
    let mut count = vec![0u64; n_bins];
    let mut prob_sum = vec![0.0; n_bins];
    let mut success = vec![0u64; n_bins];
    for (&p, o) in probs.iter().zip(outcomes) {
        let b = bin_index(p, n_bins);
        count[b] += 1;
        prob_sum[b] += p;
        success[b] += u64::from(o.is_success());
    }
    let n = probs.len() as f64;
    let mut ece = 0.0;
    let bins = (0..n_bins)
        .map(|b| {
            let (mean_prob, frequency) = if count[b] == 0 {
                (None, None)
            } else {
                let m = prob_sum[b] / count[b] as f64;
                let f = success[b] as f64 / count[b] as f64;
                ece += count[b] as f64 / n * (m - f).abs();
                (Some(m), Some(f))
            };
            CalibrationBin {
                lower: b as f64 / n_bins as f64,
                upper: (b + 1) as f64 / n_bins as f64,
                count: count[b],
                mean_prob,
                frequency,
            }
        })
        .collect();
    Ok(CalibrationReport {
        bins,
        ece,
        brier: brier(probs, outcomes)?,
        n: probs.len() as u64,
    })
}
