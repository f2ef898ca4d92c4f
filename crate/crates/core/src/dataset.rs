//! Cohort data model, CSV ingestion, population filtering and chronological splits.
//!
//! A [`Cohort`] is an immutable, schema-validated table of student [`Record`]s.
//! Column roles come from a [`Schema`], normally loaded from the JSON config.
//! Input must be clean: missing feature values are rejected at load time.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Population {
    Domestic,
    International,
}

impl Population {
    pub const ALL: [Population; 2] = [Population::Domestic, Population::International];

    pub fn as_str(self) -> &'static str {
        match self {
            Population::Domestic => "domestic",
            Population::International => "international",
        }
    }
}

impl fmt::Display for Population {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Population {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "domestic" => Ok(Population::Domestic),
            "international" => Ok(Population::International),
            other => Err(Error::InvalidInput(format!(
                "unknown population `{other}` (expected domestic or international)"
            ))),
        }
    }
}

/// Binary program outcome. `Successful` is the positive class throughout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Successful,
    Unsuccessful,
}

impl Outcome {
    pub fn is_success(self) -> bool {
        self == Outcome::Successful
    }

    pub fn indicator(self) -> f64 {
        if self.is_success() {
            1.0
        } else {
            0.0
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Successful => "successful",
            Outcome::Unsuccessful => "unsuccessful",
        }
    }

    pub fn other(self) -> Outcome {
        match self {
            Outcome::Successful => Outcome::Unsuccessful,
            Outcome::Unsuccessful => Outcome::Successful,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub kind: FeatureKind,
}

/// A group attribute column. An empty `levels` list accepts any non-empty value;
/// otherwise values must be one of the declared levels, and the declared order
/// is the order used in reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupColumn {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub id_column: String,
    pub term_column: String,
    pub population_column: String,
    pub outcome_column: String,
    pub positive_outcome: String,
    pub negative_outcome: String,
    pub group_attributes: Vec<GroupColumn>,
    #[serde(default)]
    pub features: Vec<FeatureColumn>,
}

impl Schema {
    pub fn validate(&self) -> Result<()> {
        if self.group_attributes.is_empty() {
            return Err(Error::Config(
                "schema must declare at least one group attribute".into(),
            ));
        }
        if self.positive_outcome == self.negative_outcome {
            return Err(Error::Config(
                "positive and negative outcome values must differ".into(),
            ));
        }
        let mut seen = HashSet::new();
        for name in self.column_names() {
            if name.trim().is_empty() {
                return Err(Error::Config("schema contains an empty column name".into()));
            }
            if !seen.insert(name) {
                return Err(Error::Config(format!(
                    "column `{name}` is assigned more than one role"
                )));
            }
        }
        Ok(())
    }

    /// All columns in canonical output order.
    pub fn column_names(&self) -> Vec<&str> {
        let mut names = vec![
            self.id_column.as_str(),
            self.term_column.as_str(),
            self.population_column.as_str(),
        ];
        names.extend(self.group_attributes.iter().map(|g| g.name.as_str()));
        names.extend(self.features.iter().map(|f| f.name.as_str()));
        names.push(self.outcome_column.as_str());
        names
    }

    pub fn group(&self, name: &str) -> Option<&GroupColumn> {
        self.group_attributes.iter().find(|g| g.name == name)
    }

    pub fn from_json_file(path: &Path) -> Result<Schema> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: Schema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    fn outcome_of(&self, value: &str) -> Option<Outcome> {
        if value == self.positive_outcome {
            Some(Outcome::Successful)
        } else if value == self.negative_outcome {
            Some(Outcome::Unsuccessful)
        } else {
            None
        }
    }

    fn outcome_label(&self, outcome: Outcome) -> &str {
        match outcome {
            Outcome::Successful => &self.positive_outcome,
            Outcome::Unsuccessful => &self.negative_outcome,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Numeric(f64),
    Categorical(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub term_index: u32,
    pub population: Population,
    pub groups: BTreeMap<String, String>,
    pub features: BTreeMap<String, FeatureValue>,
    pub outcome: Outcome,
}

/// Immutable, validated table of records.
#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    schema: Schema,
    records: Vec<Record>,
}

impl Cohort {
    pub fn new(schema: Schema, records: Vec<Record>) -> Result<Cohort> {
        schema.validate()?;
        let mut ids = HashSet::with_capacity(records.len());
        for record in &records {
            if record.id.is_empty() {
                return Err(Error::InvalidInput("record id must be non-empty".into()));
            }
            if !ids.insert(record.id.as_str()) {
                return Err(Error::DuplicateId(record.id.clone()));
            }
            check_record(&schema, record)
                .map_err(|m| Error::InvalidInput(format!("record `{}`: {m}", record.id)))?;
        }
        Ok(Cohort { schema, records })
    }

    /// Builds a cohort from records already known to satisfy `schema`.
    fn from_parts(schema: Schema, records: Vec<Record>) -> Cohort {
        Cohort { schema, records }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }

    /// True if `attribute` is a declared group attribute or the population column.
    pub fn has_attribute(&self, attribute: &str) -> bool {
        attribute == self.schema.population_column || self.schema.group(attribute).is_some()
    }

    /// Group value of `record` for `attribute`. The population column acts as a
    /// group attribute so residency can be audited like any other attribute.
    pub fn group_value<'a>(&self, record: &'a Record, attribute: &str) -> Option<&'a str> {
        if attribute == self.schema.population_column {
            Some(record.population.as_str())
        } else {
            record.groups.get(attribute).map(String::as_str)
        }
    }

    /// Groups of `attribute` that have at least one record, in report order:
    /// declared level order when levels are declared, else first appearance.
    pub fn groups(&self, attribute: &str) -> Result<Vec<String>> {
        if !self.has_attribute(attribute) {
            return Err(Error::UnknownAttribute(attribute.to_string()));
        }
        let mut present: Vec<String> = Vec::new();
        for record in &self.records {
            if let Some(v) = self.group_value(record, attribute) {
                if !present.iter().any(|p| p == v) {
                    present.push(v.to_string());
                }
            }
        }
        let declared: Vec<String> = if attribute == self.schema.population_column {
            Population::ALL
                .iter()
                .map(|p| p.as_str().to_string())
                .collect()
        } else {
            self.schema
                .group(attribute)
                .map(|g| g.levels.clone())
                .unwrap_or_default()
        };
        if declared.is_empty() {
            return Ok(present);
        }
        Ok(declared
            .into_iter()
            .filter(|l| present.contains(l))
            .collect())
    }

    /// Errors unless `value` is a present or declared level of `attribute`.
    pub fn check_group(&self, attribute: &str, value: &str) -> Result<()> {
        let known = self.groups(attribute)?.iter().any(|g| g == value)
            || self
                .schema
                .group(attribute)
                .is_some_and(|g| g.levels.iter().any(|l| l == value))
            || (attribute == self.schema.population_column && value.parse::<Population>().is_ok());
        if known {
            Ok(())
        } else {
            Err(Error::UnknownGroup {
                attribute: attribute.to_string(),
                value: value.to_string(),
            })
        }
    }

    /// SHA-256 of the canonical CSV rendering.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        write_cohort(self, &mut buf).expect("writing to a Vec cannot fail");
        hex::encode(Sha256::digest(&buf))
    }
}

fn check_record(schema: &Schema, record: &Record) -> std::result::Result<(), String> {
    if record.groups.len() != schema.group_attributes.len() {
        return Err("group attributes do not match schema".into());
    }
    for g in &schema.group_attributes {
        let value = record
            .groups
            .get(&g.name)
            .ok_or_else(|| format!("missing group attribute `{}`", g.name))?;
        check_level(g, value)?;
    }
    if record.features.len() != schema.features.len() {
        return Err("features do not match schema".into());
    }
    for f in &schema.features {
        match (f.kind, record.features.get(&f.name)) {
            (FeatureKind::Numeric, Some(FeatureValue::Numeric(x))) if x.is_finite() => {}
            (FeatureKind::Categorical, Some(FeatureValue::Categorical(s))) if !s.is_empty() => {}
            (_, None) => return Err(format!("missing feature `{}`", f.name)),
            _ => {
                return Err(format!(
                    "feature `{}` does not match its declared kind",
                    f.name
                ))
            }
        }
    }
    Ok(())
}

fn check_level(column: &GroupColumn, value: &str) -> std::result::Result<(), String> {
    if value.is_empty() {
        return Err(format!("empty value for `{}`", column.name));
    }
    if !column.levels.is_empty() && !column.levels.iter().any(|l| l == value) {
        return Err(format!(
            "value `{value}` is not a declared level of `{}` ({})",
            column.name,
            column.levels.join(", ")
        ));
    }
    Ok(())
}

/// Reads a cohort CSV. Row order is preserved; extra columns are ignored.
pub fn load_cohort(path: &Path, schema: &Schema) -> Result<Cohort> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_cohort(file, schema)
}

pub fn read_cohort<R: Read>(reader: R, schema: &Schema) -> Result<Cohort> {
    schema.validate()?;
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    let index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })
    };
    let id_at = index(&schema.id_column)?;
    let term_at = index(&schema.term_column)?;
    let pop_at = index(&schema.population_column)?;
    let outcome_at = index(&schema.outcome_column)?;
    let group_at = schema
        .group_attributes
        .iter()
        .map(|g| index(&g.name))
        .collect::<Result<Vec<_>>>()?;
    let feature_at = schema
        .features
        .iter()
        .map(|f| index(&f.name))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for row in csv.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let row_err = |message: String| Error::Row { line, message };
        let cell = |i: usize| row.get(i).unwrap_or("").trim();

        let id = cell(id_at).to_string();
        if id.is_empty() {
            return Err(row_err("empty id".into()));
        }
        let term_index: u32 = cell(term_at).parse().map_err(|_| {
            row_err(format!(
                "term `{}` is not a non-negative integer",
                cell(term_at)
            ))
        })?;
        let population: Population = cell(pop_at)
            .parse()
            .map_err(|e: Error| row_err(e.to_string()))?;
        let outcome = schema.outcome_of(cell(outcome_at)).ok_or_else(|| {
            row_err(format!(
                "outcome `{}` is neither `{}` nor `{}`",
                cell(outcome_at),
                schema.positive_outcome,
                schema.negative_outcome
            ))
        })?;
        let mut groups = BTreeMap::new();
        for (g, &i) in schema.group_attributes.iter().zip(&group_at) {
            check_level(g, cell(i)).map_err(row_err)?;
            groups.insert(g.name.clone(), cell(i).to_string());
        }
        let mut features = BTreeMap::new();
        for (f, &i) in schema.features.iter().zip(&feature_at) {
            let raw = cell(i);
            if raw.is_empty() {
                return Err(row_err(format!("missing value for feature `{}`", f.name)));
            }
            let value = match f.kind {
                FeatureKind::Numeric => match raw.parse::<f64>() {
                    Ok(x) if x.is_finite() => FeatureValue::Numeric(x),
                    _ => {
                        return Err(row_err(format!(
                            "feature `{}` value `{raw}` is not a finite number",
                            f.name
                        )))
                    }
                },
                FeatureKind::Categorical => FeatureValue::Categorical(raw.to_string()),
            };
            features.insert(f.name.clone(), value);
        }
        if !ids.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        records.push(Record {
            id,
            term_index,
            population,
            groups,
            features,
            outcome,
        });
    }
    Ok(Cohort::from_parts(schema.clone(), records))
}

pub fn save_cohort(cohort: &Cohort, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_cohort(cohort, std::io::BufWriter::new(file))
}

pub fn write_cohort<W: Write>(cohort: &Cohort, writer: W) -> Result<()> {
    let schema = cohort.schema();
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(schema.column_names())?;
    let mut row: Vec<String> = Vec::new();
    for r in cohort.records() {
        row.clear();
        row.push(r.id.clone());
        row.push(r.term_index.to_string());
        row.push(r.population.as_str().to_string());
        for g in &schema.group_attributes {
            row.push(r.groups[&g.name].clone());
        }
        for f in &schema.features {
            row.push(match &r.features[&f.name] {
                FeatureValue::Numeric(x) => x.to_string(),
                FeatureValue::Categorical(s) => s.clone(),
            });
        }
        row.push(schema.outcome_label(r.outcome).to_string());
        csv.write_record(&row)?;
    }
    csv.flush().map_err(|e| Error::io("<cohort csv>", e))?;
    Ok(())
}

/// Records of one population, original order preserved.
pub fn filter_population(cohort: &Cohort, population: Population) -> Cohort {
    let records = cohort
        .records()
        .iter()
        .filter(|r| r.population == population)
        .cloned()
        .collect();
    Cohort::from_parts(cohort.schema().clone(), records)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.70,
            validation: 0.15,
            test: 0.15,
        }
    }
}

impl SplitSpec {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<SplitSpec> {
        let spec = SplitSpec {
            train,
            validation,
            test,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config(format!(
                "split fractions must lie in [0, 1], got {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// Size of a leading slice holding `fraction` of `n` records, rounded down.
/// The small epsilon absorbs representation error such as `0.29 * 100 = 28.999...`.
fn floor_share(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction + 1e-9).floor() as usize).min(n)
}

/// Sorts by `(term_index, id)` and slices train/validation by floor, with the
/// remainder going to test, so no future term ever lands in train.
pub fn chronological_split(cohort: &Cohort, spec: &SplitSpec) -> Result<(Cohort, Cohort, Cohort)> {
    spec.validate()?;
    if cohort.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty cohort".into()));
    }
    let mut sorted: Vec<&Record> = cohort.records().iter().collect();
    sorted.sort_by(|a, b| {
        a.term_index
            .cmp(&b.term_index)
            .then_with(|| a.id.cmp(&b.id))
    });

    let n = sorted.len();
    let n_train = floor_share(n, spec.train);
    let n_val = floor_share(n, spec.validation).min(n - n_train);

    let take = |slice: &[&Record]| {
        Cohort::from_parts(
            cohort.schema().clone(),
            slice.iter().map(|r| (*r).clone()).collect(),
        )
    };
    Ok((
        take(&sorted[..n_train]),
        take(&sorted[n_train..n_train + n_val]),
        take(&sorted[n_train + n_val..]),
    ))
}
