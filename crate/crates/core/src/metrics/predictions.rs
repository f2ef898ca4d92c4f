use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Cohort, Outcome};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub prob_success: f64,
    pub label: Outcome,
}

/// Per-record success probabilities with thresholded labels, aligned to a cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    threshold: f64,
    entries: Vec<Prediction>,
}

pub fn label_for(prob: f64, threshold: f64) -> Outcome {
    if prob >= threshold {
        Outcome::Successful
    } else {
        Outcome::Unsuccessful
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!(
            "decision threshold must lie in [0, 1], got {threshold}"
        )));
    }
    Ok(())
}

impl PredictionSet {
    /// Labels each probability as successful iff it is at least `threshold`.
    pub fn from_probs<I, S>(ids: I, probs: &[f64], threshold: f64) -> Result<PredictionSet>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        check_threshold(threshold)?;
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        if ids.len() != probs.len() {
            return Err(Error::Misaligned(format!(
                "{} ids but {} probabilities",
                ids.len(),
                probs.len()
            )));
        }
        let entries = ids
            .into_iter()
            .zip(probs)
            .map(|(id, &p)| Prediction {
                id,
                prob_success: p,
                label: label_for(p, threshold),
            })
            .collect();
        PredictionSet::with_labels(entries, threshold)
    }

    /// Keeps the given labels as-is, which lets external pipelines override thresholding.
    pub fn with_labels(entries: Vec<Prediction>, threshold: f64) -> Result<PredictionSet> {
        check_threshold(threshold)?;
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !(0.0..=1.0).contains(&e.prob_success) {
                return Err(Error::InvalidInput(format!(
                    "prediction `{}` has probability {} outside [0, 1]",
                    e.id, e.prob_success
                )));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
        }
        Ok(PredictionSet { threshold, entries })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn entries(&self) -> &[Prediction] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.prob_success).collect()
    }

    /// Errors unless ids match the cohort's ids position by position.
    pub fn check_aligned(&self, cohort: &Cohort) -> Result<()> {
        if self.len() != cohort.len() {
            return Err(Error::Misaligned(format!(
                "{} predictions for {} records",
                self.len(),
                cohort.len()
            )));
        }
        for (i, (e, id)) in self.entries.iter().zip(cohort.ids()).enumerate() {
            if e.id != id {
                return Err(Error::Misaligned(format!(
                    "position {i}: prediction id `{}` vs record id `{id}`",
                    e.id
                )));
            }
        }
        Ok(())
    }

    /// Reorders (and subsets) the entries to follow the cohort's record order.
    /// Every cohort id must have a prediction.
    pub fn align_to(&self, cohort: &Cohort) -> Result<PredictionSet> {
        let by_id: HashMap<&str, &Prediction> =
            self.entries.iter().map(|e| (e.id.as_str(), e)).collect();
        let entries = cohort
            .ids()
            .map(|id| {
                by_id
                    .get(id)
                    .map(|e| (*e).clone())
                    .ok_or_else(|| Error::Misaligned(format!("no prediction for record `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PredictionSet {
            threshold: self.threshold,
            entries,
        })
    }
}

pub fn load_predictions(path: &Path, threshold: f64) -> Result<PredictionSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_predictions(file, threshold)
}

/// Reads `id,prob_success[,pred_label]`. A `pred_label` column, when present,
/// overrides thresholding.
pub fn read_predictions<R: Read>(reader: R, threshold: f64) -> Result<PredictionSet> {
    check_threshold(threshold)?;
    let mut csv = csv::Reader::from_reader(reader);
    let headers = csv.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let id_at = col("id").ok_or_else(|| Error::MissingColumn {
        column: "id".into(),
    })?;
    let prob_at = col("prob_success").ok_or_else(|| Error::MissingColumn {
        column: "prob_success".into(),
    })?;
    let label_at = col("pred_label");

    let mut entries = Vec::new();
    for row in csv.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let cell = |i: usize| row.get(i).unwrap_or("").trim();
        let prob: f64 = cell(prob_at).parse().map_err(|_| Error::Row {
            line,
            message: format!("probability `{}` is not a number", cell(prob_at)),
        })?;
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::Row {
                line,
                message: format!("probability {prob} outside [0, 1]"),
            });
        }
        let label = match label_at.map(cell) {
            None | Some("") => label_for(prob, threshold),
            Some("successful") => Outcome::Successful,
            Some("unsuccessful") => Outcome::Unsuccessful,
            Some(other) => {
                return Err(Error::Row {
                    line,
                    message: format!("pred_label `{other}` is not successful/unsuccessful"),
                })
            }
        };
        entries.push(Prediction {
            id: cell(id_at).to_string(),
            prob_success: prob,
            label,
        });
    }
    PredictionSet::with_labels(entries, threshold)
}

pub fn save_predictions(preds: &PredictionSet, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_predictions(preds, std::io::BufWriter::new(file))
}

pub fn write_predictions<W: Write>(preds: &PredictionSet, writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["id", "prob_success", "pred_label"])?;
    for e in preds.entries() {
        csv.write_record([e.id.as_str(), &e.prob_success.to_string(), e.label.as_str()])?;
    }
    csv.flush().map_err(|e| Error::io("<predictions csv>", e))?;
    Ok(())
}
