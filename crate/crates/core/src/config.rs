use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::amplification::UpstreamMeasure;
use crate::dataset::{Outcome, Schema, SplitSpec};
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_THRESHOLD;
use crate::synth::SynthSpec;
use crate::tiering::TierQuotas;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Neighbours considered by SMOTE; 0 disables oversampling.
    pub smote_k: usize,
    pub standardize: bool,
    pub l2: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            smote_k: 5,
            standardize: true,
            l2: 1e-3,
            learning_rate: 1.0,
            max_epochs: 500,
            tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    /// Group attributes to audit; empty means every attribute in the schema.
    pub attributes: Vec<String>,
    pub threshold: f64,
    pub quotas: TierQuotas,
    pub ece_bins: usize,
    pub histogram_bins: usize,
    pub upstream_measure: UpstreamMeasure,
    pub positive_class: Outcome,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            attributes: Vec::new(),
            threshold: DEFAULT_THRESHOLD,
            quotas: TierQuotas::default(),
            ece_bins: 10,
            histogram_bins: 10,
            upstream_measure: UpstreamMeasure::default(),
            positive_class: Outcome::Successful,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        if self.ece_bins == 0 || self.histogram_bins == 0 {
            return Err(Error::Config("bin counts must be >= 1".into()));
        }
        self.quotas.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub schema: Schema,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub audit: AuditConfig,
    /// Generator spec used by `synth`; the calibrated preset when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            schema: SynthSpec::default().schema(),
            split: SplitSpec::default(),
            model: ModelConfig::default(),
            audit: AuditConfig::default(),
            synth: None,
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Config> {
        let config: Config =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        self.split.validate()?;
        self.audit.validate()?;
        for a in &self.audit.attributes {
            if a != &self.schema.population_column && self.schema.group(a).is_none() {
                return Err(Error::Config(format!(
                    "audit attribute `{a}` is not in the schema"
                )));
            }
        }
        let m = &self.model;
        if !(m.l2 >= 0.0 && m.learning_rate > 0.0 && m.tolerance >= 0.0) {
            return Err(Error::Config(
                "model needs l2 >= 0, learning_rate > 0 and tolerance >= 0".into(),
            ));
        }
        if let Some(spec) = &self.synth {
            spec.validate()?;
        }
        Ok(())
    }

    /// Attributes to audit, in schema order when none are configured.
    pub fn attributes(&self) -> Vec<String> {
        if self.audit.attributes.is_empty() {
            self.schema
                .group_attributes
                .iter()
                .map(|g| g.name.clone())
                .collect()
        } else {
            self.audit.attributes.clone()
        }
    }

    /// SHA-256 of the canonical JSON serialisation.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        assert_eq!(Config::from_json("{}").unwrap(), Config::default());
    }

    #[test]
    fn bad_values_are_validation_errors() {
        for text in [
            r#"{"audit": {"threshold": 1.5}}"#,
            r#"{"audit": {"quotas": {"high": 0.5, "medium": 0.5, "low": 0.5}}}"#,
            r#"{"split": {"train": 0.9, "validation": 0.2, "test": 0.0}}"#,
            r#"{"audit": {"attributes": ["ethnicity"]}}"#,
            r#"{"unknown_key": 1}"#,
            "not json",
        ] {
            let err = Config::from_json(text).unwrap_err();
            assert!(err.is_validation(), "{text}: {err}");
        }
    }

    #[test]
    fn population_is_an_auditable_attribute() {
        let c =
            Config::from_json(r#"{"audit": {"attributes": ["population", "gender"]}}"#).unwrap();
        assert_eq!(c.attributes(), vec!["population", "gender"]);
    }

    #[test]
    fn digest_tracks_content() {
        let a = Config::default();
        let mut b = a.clone();
        b.seed = 1;
        assert_eq!(a.digest(), Config::default().digest());
        assert_ne!(a.digest(), b.digest());
    }
}
