//! Desk-scale model stage: one-hot design matrices, SMOTE class balancing and
//! an L2-regularised logistic reference scorer.
//!
//! The scorer stands in for whatever production model an institution runs;
//! audits only ever see its probabilities through a [`PredictionSet`].

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Cohort, FeatureKind, FeatureValue};
use crate::error::{Error, Result};
use crate::metrics::PredictionSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncodedColumn {
    Numeric {
        name: String,
        center: f64,
        scale: f64,
    },
    Categorical {
        name: String,
        levels: Vec<String>,
    },
}

/// Maps cohort features to numeric columns. Categorical levels are learned
/// from the fitting cohort; an unseen level encodes as all zeros.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub columns: Vec<EncodedColumn>,
}

impl FeatureEncoder {
    pub fn fit(cohort: &Cohort, standardize: bool) -> FeatureEncoder {
        let columns = cohort
            .schema()
            .features
            .iter()
            .map(|f| match f.kind {
                FeatureKind::Numeric => {
                    let (center, scale) = if standardize {
                        mean_sd(cohort.records().iter().filter_map(
                            |r| match r.features.get(&f.name) {
                                Some(FeatureValue::Numeric(x)) => Some(*x),
                                _ => None,
                            },
                        ))
                    } else {
                        (0.0, 1.0)
                    };
                    EncodedColumn::Numeric {
                        name: f.name.clone(),
                        center,
                        scale,
                    }
                }
                FeatureKind::Categorical => {
                    let levels: BTreeSet<String> = cohort
                        .records()
                        .iter()
                        .filter_map(|r| match r.features.get(&f.name) {
                            Some(FeatureValue::Categorical(s)) => Some(s.clone()),
                            _ => None,
                        })
                        .collect();
                    EncodedColumn::Categorical {
                        name: f.name.clone(),
                        levels: levels.into_iter().collect(),
                    }
                }
            })
            .collect();
        FeatureEncoder { columns }
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .flat_map(|c| match c {
                EncodedColumn::Numeric { name, .. } => vec![name.clone()],
                EncodedColumn::Categorical { name, levels } => {
                    levels.iter().map(|l| format!("{name}={l}")).collect()
                }
            })
            .collect()
    }

    pub fn encode(&self, cohort: &Cohort) -> Result<DesignMatrix> {
        let names = self.feature_names();
        let mut data = Vec::with_capacity(cohort.len() * names.len());
        for r in cohort.records() {
            for c in &self.columns {
                match c {
                    EncodedColumn::Numeric {
                        name,
                        center,
                        scale,
                    } => match r.features.get(name) {
                        Some(FeatureValue::Numeric(x)) => data.push((x - center) / scale),
                        _ => {
                            return Err(Error::InvalidInput(format!(
                                "record `{}` has no numeric feature `{name}`",
                                r.id
                            )))
                        }
                    },
                    EncodedColumn::Categorical { name, levels } => {
                        let value = match r.features.get(name) {
                            Some(FeatureValue::Categorical(s)) => s,
                            _ => {
                                return Err(Error::InvalidInput(format!(
                                    "record `{}` has no categorical feature `{name}`",
                                    r.id
                                )))
                            }
                        };
                        data.extend(levels.iter().map(|l| f64::from(u8::from(l == value))));
                    }
                }
            }
        }
        Ok(DesignMatrix {
            ids: cohort.ids().map(str::to_string).collect(),
            feature_names: names,
            data,
            labels: cohort
                .records()
                .iter()
                .map(|r| r.outcome.is_success())
                .collect(),
        })
    }
}

fn mean_sd(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (0.0, 1.0);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
    let sd = var.sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}

/// Row-major numeric features with a success label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    ids: Vec<String>,
    feature_names: Vec<String>,
    data: Vec<f64>,
    labels: Vec<bool>,
}

impl DesignMatrix {
    pub fn new(
        ids: Vec<String>,
        feature_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels: Vec<bool>,
    ) -> Result<DesignMatrix> {
        if ids.len() != rows.len() || labels.len() != rows.len() {
            return Err(Error::Misaligned(format!(
                "{} ids, {} rows, {} labels",
                ids.len(),
                rows.len(),
                labels.len()
            )));
        }
        let d = feature_names.len();
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::InvalidInput(format!(
                "row {i} has {} values, expected {d}",
                rows[i].len()
            )));
        }
        if rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(
                "design matrix has non-finite entries".into(),
            ));
        }
        Ok(DesignMatrix {
            ids,
            feature_names,
            data: rows.concat(),
            labels,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_cols();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&y| y).count();
        (self.n_rows() - pos, pos)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Indices (into `points`) of the `k` nearest other points to `points[i]`,
/// nearest first, ties broken by index.
fn nearest_neighbors(points: &[&[f64]], i: usize, k: usize) -> Vec<usize> {
    let mut dist: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(j, p)| (squared_distance(points[i], p), j))
        .collect();
    let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if dist.len() > k {
        dist.select_nth_unstable_by(k - 1, by_dist);
        dist.truncate(k);
    }
    dist.sort_by(by_dist);
    dist.into_iter().map(|(_, j)| j).collect()
}

/// Oversamples the minority class until both classes have equal counts.
///
/// Minority rows are used as seeds round-robin; each synthetic row is
/// `x + u * (nn - x)` with `nn` one of the seed's `k` nearest minority
/// neighbours (Euclidean) and `u ~ U[0, 1)`. Original rows are kept in
/// their original order and synthetic rows are appended.
pub fn smote(matrix: &DesignMatrix, k: usize, seed: u64) -> Result<DesignMatrix> {
    if k == 0 {
        return Err(Error::Config("SMOTE needs k >= 1".into()));
    }
    let (neg, pos) = matrix.class_counts();
    if neg == pos {
        return Ok(matrix.clone());
    }
    let minority_label = pos < neg;
    let minority: Vec<usize> = (0..matrix.n_rows())
        .filter(|&i| matrix.labels[i] == minority_label)
        .collect();
    let m = minority.len();
    if m < k + 1 {
        return Err(Error::InvalidInput(format!(
            "SMOTE with k = {k} needs at least {} minority rows, found {m}",
            k + 1
        )));
    }
    let needed = neg.max(pos) - m;
    let points: Vec<&[f64]> = minority.iter().map(|&i| matrix.row(i)).collect();
    let seeds_used = m.min(needed);
    let neighbors: Vec<Vec<usize>> = (0..seeds_used)
        .into_par_iter()
        .map(|i| nearest_neighbors(&points, i, k))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = matrix.clone();
    out.data.reserve(needed * matrix.n_cols());
    for j in 0..needed {
        let s = j % m;
        let nn = neighbors[s][rng.random_range(0..k)];
        let gap: f64 = rng.random();
        let (x, y) = (points[s], points[nn]);
        out.data
            .extend(x.iter().zip(y).map(|(a, b)| a + gap * (b - a)));
        out.labels.push(minority_label);
        out.ids
            .push(format!("{}~smote{j}", matrix.ids[minority[s]]));
    }
    Ok(out)
}

/// Logistic scorer weights plus the hyperparameters used to fit them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerParams {
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub l2: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for ScorerParams {
    fn default() -> Self {
        ScorerParams {
            feature_names: Vec::new(),
            weights: Vec::new(),
            intercept: 0.0,
            l2: 1e-3,
            learning_rate: 1.0,
            max_epochs: 500,
            tolerance: 1e-10,
            seed: 0,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl ScorerParams {
    fn logit(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    fn check_dims(&self, matrix: &DesignMatrix) -> Result<()> {
        if self.weights.len() != matrix.n_cols() || self.feature_names != matrix.feature_names {
            return Err(Error::InvalidInput(format!(
                "model expects {} features, matrix has {}",
                self.weights.len(),
                matrix.n_cols()
            )));
        }
        Ok(())
    }

    /// Mean log-loss plus `l2 / 2 * |w|^2` (intercept unpenalised).
    pub fn loss(&self, matrix: &DesignMatrix) -> f64 {
        let n = matrix.n_rows() as f64;
        let data: f64 = (0..matrix.n_rows())
            .map(|i| {
                let z = self.logit(matrix.row(i));
                softplus(z) - if matrix.labels[i] { z } else { 0.0 }
            })
            .sum();
        data / n + 0.5 * self.l2 * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Loss and its gradient; the gradient's last entry is the intercept's.
    pub fn loss_and_gradient(&self, matrix: &DesignMatrix) -> (f64, Vec<f64>) {
        let n = matrix.n_rows() as f64;
        let d = matrix.n_cols();
        let mut grad = vec![0.0; d + 1];
        let mut data = 0.0;
        for i in 0..matrix.n_rows() {
            let x = matrix.row(i);
            let z = self.logit(x);
            let y = if matrix.labels[i] { 1.0 } else { 0.0 };
            data += softplus(z) - y * z;
            let r = sigmoid(z) - y;
            for (g, v) in grad.iter_mut().zip(x) {
                *g += r * v;
            }
            grad[d] += r;
        }
        for g in &mut grad {
            *g /= n;
        }
        for (g, w) in grad.iter_mut().zip(&self.weights) {
            *g += self.l2 * w;
        }
        let penalty = 0.5 * self.l2 * self.weights.iter().map(|w| w * w).sum::<f64>();
        (data / n + penalty, grad)
    }

    fn stepped(&self, grad: &[f64], lr: f64) -> ScorerParams {
        let mut next = self.clone();
        for (w, g) in next.weights.iter_mut().zip(grad) {
            *w -= lr * g;
        }
        next.intercept -= lr * grad[grad.len() - 1];
        next
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingRun {
    pub params: ScorerParams,
    /// Loss before the first step and after every accepted step.
    pub losses: Vec<f64>,
}

/// Full-batch gradient descent. A step that would raise the loss is retried
/// at half the learning rate, so the recorded losses never increase.
pub fn fit_reference(matrix: &DesignMatrix, params: &ScorerParams) -> Result<TrainingRun> {
    if !(params.l2 >= 0.0 && params.l2.is_finite()) {
        return Err(Error::Config(format!(
            "l2 strength must be >= 0, got {}",
            params.l2
        )));
    }
    if !(params.learning_rate > 0.0 && params.learning_rate.is_finite()) {
        return Err(Error::Config(format!(
            "learning rate must be > 0, got {}",
            params.learning_rate
        )));
    }
    let (neg, pos) = matrix.class_counts();
    if neg == 0 || pos == 0 {
        return Err(Error::InvalidInput(
            "training data must contain both successful and unsuccessful rows".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let init = Normal::new(0.0, 0.01).expect("valid normal");
    let mut current = ScorerParams {
        feature_names: matrix.feature_names.clone(),
        weights: (0..matrix.n_cols())
            .map(|_| init.sample(&mut rng))
            .collect(),
        intercept: 0.0,
        ..params.clone()
    };
    let (mut loss, mut grad) = current.loss_and_gradient(matrix);
    let mut losses = vec![loss];
    let mut lr = params.learning_rate;
    'epochs: for _ in 0..params.max_epochs {
        let (next, next_loss) = loop {
            let candidate = current.stepped(&grad, lr);
            let candidate_loss = candidate.loss(matrix);
            if candidate_loss <= loss {
                break (candidate, candidate_loss);
            }
            lr *= 0.5;
            if lr < 1e-12 {
                break 'epochs;
            }
        };
        let improvement = loss - next_loss;
        current = next;
        let (l, g) = current.loss_and_gradient(matrix);
        loss = l;
        grad = g;
        losses.push(loss);
        if improvement <= params.tolerance * (1.0 + loss.abs()) {
            break;
        }
    }
    if current.weights.iter().any(|w| !w.is_finite()) || !current.intercept.is_finite() {
        return Err(Error::InvalidInput(
            "training diverged to non-finite weights".into(),
        ));
    }
    Ok(TrainingRun {
        params: current,
        losses,
    })
}

pub fn train_reference(matrix: &DesignMatrix, params: &ScorerParams) -> Result<ScorerParams> {
    fit_reference(matrix, params).map(|run| run.params)
}

pub fn predict_proba(
    params: &ScorerParams,
    matrix: &DesignMatrix,
    threshold: f64,
) -> Result<PredictionSet> {
    params.check_dims(matrix)?;
    let probs: Vec<f64> = (0..matrix.n_rows())
        .map(|i| sigmoid(params.logit(matrix.row(i))))
        .collect();
    PredictionSet::from_probs(matrix.ids.iter().cloned(), &probs, threshold)
}

/// Everything needed to re-score a cohort: the fitted encoder and weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub encoder: FeatureEncoder,
    pub smote_k: usize,
    pub params: ScorerParams,
}

impl ModelArtifact {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ModelArtifact> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn score(&self, cohort: &Cohort, threshold: f64) -> Result<PredictionSet> {
        let matrix = self.encoder.encode(cohort)?;
        predict_proba(&self.params, &matrix, threshold)
    }
}
