//! Seeded synthetic cohorts with controllable group success rates and a
//! bimodal predicted-score distribution.
//!
//! Every `(population, gender, age_group)` cell draws from its own ChaCha8
//! stream whose 256-bit seed is `SHA-256(seed_le_bytes || "population/gender/age_group")`.
//! Adding, removing or reordering cells therefore never changes the draws of
//! any other cell.
//!
//! Each record carries a latent `affinity` feature drawn from a truncated
//! normal whose component depends on the record's outcome; [`synth_scores`]
//! exposes it as a predicted success probability.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    Cohort, FeatureColumn, FeatureKind, FeatureValue, GroupColumn, Outcome, Population, Record,
    Schema,
};
use crate::error::{Error, Result};
use crate::metrics::PredictionSet;

pub const AFFINITY: &str = "affinity";
pub const GENDER: &str = "gender";
pub const AGE_GROUP: &str = "age_group";
pub const AGE_BANDS: [&str; 8] = [
    "0-18", "19-20", "21-25", "26-30", "31-35", "36-40", "41-50", "51+",
];
const CREDENTIALS: [&str; 4] = ["certificate", "diploma", "advanced_diploma", "degree"];

/// Two truncated-normal components on [0, 1]: successful records draw their
/// score from the `success_*` component, unsuccessful ones from `failure_*`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub success_mean: f64,
    pub success_sd: f64,
    pub failure_mean: f64,
    pub failure_sd: f64,
}

impl Default for ScoreModel {
    fn default() -> Self {
        ScoreModel {
            success_mean: 0.80,
            success_sd: 0.18,
            failure_mean: 0.30,
            failure_sd: 0.22,
        }
    }
}

impl ScoreModel {
    fn shifted(self, shift: f64) -> ScoreModel {
        ScoreModel {
            success_mean: self.success_mean + shift,
            failure_mean: self.failure_mean + shift,
            ..self
        }
    }

    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, sd) in [
            ("success_sd", self.success_sd),
            ("failure_sd", self.failure_sd),
        ] {
            if !(sd > 0.0 && sd.is_finite()) {
                out.push(format!("{name} must be > 0, got {sd}"));
            }
        }
        for (name, m) in [
            ("success_mean", self.success_mean),
            ("failure_mean", self.failure_mean),
        ] {
            if !m.is_finite() {
                out.push(format!("{name} must be finite"));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthCell {
    pub population: Population,
    pub gender: String,
    pub age_group: String,
    pub count: u64,
    pub success_rate: f64,
    /// Overrides the spec-wide score model for this cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoreModel>,
    /// Added to both component means, e.g. to push one gender's scores down.
    #[serde(default)]
    pub score_shift: f64,
}

impl SynthCell {
    fn key(&self) -> String {
        format!("{}/{}/{}", self.population, self.gender, self.age_group)
    }

    fn effective_score(&self, default: ScoreModel) -> ScoreModel {
        self.score.unwrap_or(default).shifted(self.score_shift)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    /// Term indices are drawn uniformly from `0..n_terms`.
    pub n_terms: u32,
    /// Number of pure-noise numeric feature columns.
    #[serde(default)]
    pub filler_features: usize,
    pub score_model: ScoreModel,
    pub cells: Vec<SynthCell>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec::calibrated(10, 20_240_611)
    }
}

// Target population totals, and the gender success rates
// that reproduce the target overall rates (67% domestic, 85% international).
const DOMESTIC_TOTAL: u64 = 61_375;
const INTERNATIONAL_TOTAL: u64 = 40_978;
const DOMESTIC_RATES: (f64, f64) = (0.73, 0.59);
const INTERNATIONAL_RATES: (f64, f64) = (0.89, 0.82);
const MALE_SCORE_SHIFT: f64 = -0.08;

// Illustrative age structure: shares per band and success-rate offsets
// (younger bands do worse). Offsets are re-centred per population so the
// gender and population rates above are preserved in expectation.
const DOMESTIC_AGE_SHARES: [f64; 8] = [0.22, 0.24, 0.24, 0.12, 0.07, 0.05, 0.04, 0.02];
const INTERNATIONAL_AGE_SHARES: [f64; 8] = [0.03, 0.17, 0.45, 0.22, 0.08, 0.03, 0.015, 0.005];
const AGE_RATE_OFFSETS: [f64; 8] = [-0.04, -0.05, -0.01, 0.03, 0.04, 0.05, 0.05, 0.04];

/// Splits `total` into integer parts proportional to `weights` (largest remainder).
fn apportion(total: u64, weights: &[f64]) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut parts: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let mut left = total - parts.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        parts[i] += 1;
        left -= 1;
    }
    parts
}

impl SynthSpec {
    /// Calibrated preset: target population sizes divided by
    /// `divisor` (rounded), gender success rates that reproduce the target
    /// population rates, illustrative age bands, and male scores shifted down.
    pub fn calibrated(divisor: u64, seed: u64) -> SynthSpec {
        let divisor = divisor.max(1);
        let scaled = |n: u64| (n + divisor / 2) / divisor;
        let mut cells = Vec::new();
        for (population, total, (female_rate, male_rate), age_shares) in [
            (
                Population::Domestic,
                scaled(DOMESTIC_TOTAL),
                DOMESTIC_RATES,
                DOMESTIC_AGE_SHARES,
            ),
            (
                Population::International,
                scaled(INTERNATIONAL_TOTAL),
                INTERNATIONAL_RATES,
                INTERNATIONAL_AGE_SHARES,
            ),
        ] {
            let overall = if population == Population::Domestic {
                0.67
            } else {
                0.85
            };
            let female_share = (overall - male_rate) / (female_rate - male_rate);
            let mean_offset: f64 = age_shares
                .iter()
                .zip(AGE_RATE_OFFSETS)
                .map(|(s, o)| s * o)
                .sum();
            let mut weights = Vec::new();
            let mut specs = Vec::new();
            for (gender, share, rate, shift) in [
                ("female", female_share, female_rate, 0.0),
                ("male", 1.0 - female_share, male_rate, MALE_SCORE_SHIFT),
            ] {
                for (band, (age_share, offset)) in AGE_BANDS
                    .iter()
                    .zip(age_shares.iter().zip(AGE_RATE_OFFSETS))
                {
                    weights.push(share * age_share);
                    specs.push((
                        gender,
                        *band,
                        (rate + offset - mean_offset).clamp(0.0, 1.0),
                        shift,
                    ));
                }
            }
            for (count, (gender, band, rate, shift)) in
                apportion(total, &weights).into_iter().zip(specs)
            {
                cells.push(SynthCell {
                    population,
                    gender: gender.to_string(),
                    age_group: band.to_string(),
                    count,
                    success_rate: rate,
                    score: None,
                    score_shift: shift,
                });
            }
        }
        SynthSpec {
            seed,
            n_terms: 9,
            filler_features: 2,
            score_model: ScoreModel::default(),
            cells,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for p in self.score_model.problems() {
            problems.push(format!("score_model: {p}"));
        }
        if self.n_terms == 0 {
            problems.push("n_terms must be >= 1".to_string());
        }
        let mut keys = HashSet::new();
        for cell in &self.cells {
            let key = cell.key();
            if !(0.0..=1.0).contains(&cell.success_rate) {
                problems.push(format!(
                    "cell {key}: success_rate {} outside [0, 1]",
                    cell.success_rate
                ));
            }
            if let Some(m) = &cell.score {
                problems.extend(m.problems().into_iter().map(|p| format!("cell {key}: {p}")));
            }
            if !cell.score_shift.is_finite() {
                problems.push(format!("cell {key}: score_shift must be finite"));
            }
            if cell.gender.is_empty() || cell.age_group.is_empty() {
                problems.push(format!(
                    "cell {key}: gender and age_group must be non-empty"
                ));
            }
            if !keys.insert(key.clone()) {
                problems.push(format!("cell {key} is declared twice"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid synthetic spec: {}",
                problems.join("; ")
            )))
        }
    }

    /// Schema of generated cohorts; level order follows first appearance in `cells`.
    pub fn schema(&self) -> Schema {
        let mut genders: Vec<String> = Vec::new();
        let mut ages: Vec<String> = Vec::new();
        for c in &self.cells {
            if !genders.contains(&c.gender) {
                genders.push(c.gender.clone());
            }
            if !ages.contains(&c.age_group) {
                ages.push(c.age_group.clone());
            }
        }
        let mut features = vec![
            FeatureColumn {
                name: AFFINITY.into(),
                kind: FeatureKind::Numeric,
            },
            FeatureColumn {
                name: "credential".into(),
                kind: FeatureKind::Categorical,
            },
        ];
        features.extend((1..=self.filler_features).map(|i| FeatureColumn {
            name: format!("filler_{i}"),
            kind: FeatureKind::Numeric,
        }));
        Schema {
            id_column: "id".into(),
            term_column: "term".into(),
            population_column: "population".into(),
            outcome_column: "outcome".into(),
            positive_outcome: "successful".into(),
            negative_outcome: "unsuccessful".into(),
            group_attributes: vec![
                GroupColumn {
                    name: GENDER.into(),
                    levels: genders,
                },
                GroupColumn {
                    name: AGE_GROUP.into(),
                    levels: ages,
                },
            ],
            features,
        }
    }

    fn cell_rng(&self, cell: &SynthCell) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(cell.key().as_bytes());
        ChaCha8Rng::from_seed(hasher.finalize().into())
    }
}

/// Draws from N(mean, sd) conditioned on [0, 1]. Falls back to clamping when
/// the interval carries almost no mass.
fn truncated_normal<R: Rng>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    let normal = Normal::new(mean, sd).expect("sd validated");
    for _ in 0..10_000 {
        let x = normal.sample(rng);
        if (0.0..=1.0).contains(&x) {
            return x;
        }
    }
    mean.clamp(0.0, 1.0)
}

fn generate_cell(spec: &SynthSpec, cell: &SynthCell) -> Vec<Record> {
    let mut rng = spec.cell_rng(cell);
    let scores = cell.effective_score(spec.score_model);
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let prefix = match cell.population {
        Population::Domestic => "D",
        Population::International => "I",
    };
    (0..cell.count)
        .map(|i| {
            let term_index = rng.random_range(0..spec.n_terms);
            let success = rng.random::<f64>() < cell.success_rate;
            let affinity = if success {
                truncated_normal(&mut rng, scores.success_mean, scores.success_sd)
            } else {
                truncated_normal(&mut rng, scores.failure_mean, scores.failure_sd)
            };
            let credential = CREDENTIALS[rng.random_range(0..CREDENTIALS.len())];
            let mut features = BTreeMap::from([
                (AFFINITY.to_string(), FeatureValue::Numeric(affinity)),
                (
                    "credential".to_string(),
                    FeatureValue::Categorical(credential.to_string()),
                ),
            ]);
            for f in 1..=spec.filler_features {
                features.insert(
                    format!("filler_{f}"),
                    FeatureValue::Numeric(noise.sample(&mut rng)),
                );
            }
            Record {
                id: format!("{prefix}-{}-{}-{i:06}", cell.gender, cell.age_group),
                term_index,
                population: cell.population,
                groups: BTreeMap::from([
                    (GENDER.to_string(), cell.gender.clone()),
                    (AGE_GROUP.to_string(), cell.age_group.clone()),
                ]),
                features,
                outcome: if success {
                    Outcome::Successful
                } else {
                    Outcome::Unsuccessful
                },
            }
        })
        .collect()
}

/// Generates the cohort cell by cell (in parallel), concatenated in spec order.
pub fn generate_cohort(spec: &SynthSpec) -> Result<Cohort> {
    spec.validate()?;
    let records: Vec<Record> = spec
        .cells
        .par_iter()
        .map(|cell| generate_cell(spec, cell))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    Cohort::new(spec.schema(), records)
}

/// Uses each record's latent affinity as its predicted success probability.
pub fn synth_scores(cohort: &Cohort, spec: &SynthSpec, threshold: f64) -> Result<PredictionSet> {
    spec.validate()?;
    let mismatch =
        |why: String| Error::Misaligned(format!("cohort does not match synthetic spec: {why}"));
    let mut seen: HashMap<(Population, &str, &str), u64> = HashMap::new();
    let mut probs = Vec::with_capacity(cohort.len());
    for r in cohort.records() {
        let gender = r.groups.get(GENDER).map(String::as_str).unwrap_or("");
        let age = r.groups.get(AGE_GROUP).map(String::as_str).unwrap_or("");
        *seen.entry((r.population, gender, age)).or_default() += 1;
        match r.features.get(AFFINITY) {
            Some(FeatureValue::Numeric(x)) if (0.0..=1.0).contains(x) => probs.push(*x),
            _ => {
                return Err(mismatch(format!(
                    "record `{}` has no affinity in [0, 1]",
                    r.id
                )))
            }
        }
    }
    for cell in &spec.cells {
        let got = seen
            .remove(&(
                cell.population,
                cell.gender.as_str(),
                cell.age_group.as_str(),
            ))
            .unwrap_or(0);
        if got != cell.count {
            return Err(mismatch(format!(
                "cell {} has {got} records, expected {}",
                cell.key(),
                cell.count
            )));
        }
    }
    if let Some(((p, g, a), n)) = seen.into_iter().find(|(_, n)| *n > 0) {
        return Err(mismatch(format!(
            "{n} records in undeclared cell {p}/{g}/{a}"
        )));
    }
    PredictionSet::from_probs(cohort.ids(), &probs, threshold)
}
