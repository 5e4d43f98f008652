//! On-disk configuration: one TOML file covers the column mapping and every
//! sampler hyperparameter (CLI flags override), and a second TOML format
//! declares confounding-function scenarios for the sensitivity analysis.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::IngestSchema;
use crate::design::TreatmentCoding;
use crate::random_effects::AlphaShape;
use crate::sampler::SamplerConfig;
use crate::sensitivity::{CfPrior, ConfoundingSpec, SensitivityError};
use crate::SurvivalDataset;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown treatment label `{0}` in confounding spec")]
    UnknownArm(String),
    #[error("{0}")]
    Invalid(String),
}

/// Top-level analysis configuration file.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub data: DataSection,
    pub sampler: SamplerSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub time: String,
    pub event: String,
    pub cluster: String,
    pub trt: String,
    pub categorical: Vec<String>,
    pub exclude: Vec<String>,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = IngestSchema::default();
        DataSection {
            time: s.time,
            event: s.event,
            cluster: s.cluster,
            trt: s.trt,
            categorical: s.categorical,
            exclude: s.exclude,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub draws: usize,
    pub burnin: usize,
    pub thin: usize,
    pub trees: usize,
    pub k: f64,
    pub nu: f64,
    pub base: f64,
    pub power: f64,
    pub n_min: usize,
    pub chains: usize,
    pub seed: u64,
    /// "reference" (J-1 indicator columns) or "onehot".
    pub treatment_coding: String,
    /// "full-conditional" or "paper-expansion".
    pub alpha_shape: String,
    pub moves: MovesSection,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let c = SamplerConfig::default();
        SamplerSection {
            draws: c.draws,
            burnin: c.burnin,
            thin: c.thin,
            trees: c.trees,
            k: c.k,
            nu: c.nu,
            base: c.base,
            power: c.power,
            n_min: c.n_min,
            chains: c.chains,
            seed: c.seed,
            treatment_coding: "reference".into(),
            alpha_shape: "full-conditional".into(),
            moves: MovesSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MovesSection {
    pub grow: f64,
    pub prune: f64,
    pub change: f64,
    pub swap: f64,
}

impl Default for MovesSection {
    fn default() -> Self {
        let [grow, prune, change, swap] = crate::trees::DEFAULT_MOVE_PROBS;
        MovesSection {
            grow,
            prune,
            change,
            swap,
        }
    }
}

impl AnalysisConfig {
    pub fn load(path: &Path) -> Result<AnalysisConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn ingest_schema(&self) -> IngestSchema {
        IngestSchema {
            time: self.data.time.clone(),
            event: self.data.event.clone(),
            cluster: self.data.cluster.clone(),
            trt: self.data.trt.clone(),
            categorical: self.data.categorical.clone(),
            exclude: self.data.exclude.clone(),
        }
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig, ConfigError> {
        let coding = match self.sampler.treatment_coding.as_str() {
            "reference" => TreatmentCoding::Reference,
            "onehot" => TreatmentCoding::OneHot,
            other => {
                return Err(ConfigError::Invalid(format!(
                    "treatment_coding must be `reference` or `onehot`, got `{other}`"
                )))
            }
        };
        let alpha_shape = match self.sampler.alpha_shape.as_str() {
            "full-conditional" => AlphaShape::FullConditional,
            "paper-expansion" => AlphaShape::PaperExpansion,
            other => {
                return Err(ConfigError::Invalid(format!(
                    "alpha_shape must be `full-conditional` or `paper-expansion`, got `{other}`"
                )))
            }
        };
        Ok(SamplerConfig {
            draws: self.sampler.draws,
            burnin: self.sampler.burnin,
            thin: self.sampler.thin,
            trees: self.sampler.trees,
            k: self.sampler.k,
            nu: self.sampler.nu,
            base: self.sampler.base,
            power: self.sampler.power,
            n_min: self.sampler.n_min,
            move_probs: [
                self.sampler.moves.grow,
                self.sampler.moves.prune,
                self.sampler.moves.change,
                self.sampler.moves.swap,
            ],
            seed: self.sampler.seed,
            chains: self.sampler.chains,
            coding,
            alpha_shape,
        })
    }
}

/// Confounding-function scenario file: one or more named scenarios, each a
/// list of ordered-pair priors. Pair entries name treatments by their data
/// labels; `sign` is one of `+`, `-`, `free`, `point`; `+`/`-`/`free` take
/// `bound`, `point` takes `value`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfoundingFile {
    #[serde(default)]
    pub scenario: Vec<ScenarioSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    #[serde(default)]
    pub pairs: Vec<PairSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub treated: String,
    pub other: String,
    pub sign: String,
    #[serde(default)]
    pub bound: Option<f64>,
    #[serde(default)]
    pub value: Option<f64>,
}

impl ConfoundingFile {
    pub fn load(path: &Path) -> Result<ConfoundingFile, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Resolve treatment labels against a dataset and build one
    /// [`ConfoundingSpec`] per scenario.
    pub fn resolve(
        &self,
        ds: &SurvivalDataset,
    ) -> Result<Vec<(String, ConfoundingSpec)>, ConfigError> {
        let mut out = Vec::new();
        for sc in &self.scenario {
            let mut spec = ConfoundingSpec::zero(ds.n_arms());
            for p in &sc.pairs {
                let treated = ds
                    .arm_by_label(&p.treated)
                    .ok_or_else(|| ConfigError::UnknownArm(p.treated.clone()))?;
                let other = ds
                    .arm_by_label(&p.other)
                    .ok_or_else(|| ConfigError::UnknownArm(p.other.clone()))?;
                let prior = match p.sign.as_str() {
                    "+" => CfPrior::Positive(require_bound(p)?),
                    "-" => CfPrior::Negative(require_bound(p)?),
                    "free" => CfPrior::Free(require_bound(p)?),
                    "point" => CfPrior::Point(p.value.ok_or_else(|| {
                        ConfigError::Invalid(format!(
                            "pair ({}, {}): sign `point` requires `value`",
                            p.treated, p.other
                        ))
                    })?),
                    other => {
                        return Err(ConfigError::Invalid(format!(
                            "unknown sign `{other}` (use +, -, free, point)"
                        )))
                    }
                };
                spec.set(treated, other, prior).map_err(|e: SensitivityError| {
                    ConfigError::Invalid(e.to_string())
                })?;
            }
            out.push((sc.name.clone(), spec));
        }
        if out.is_empty() {
            return Err(ConfigError::Invalid(
                "confounding spec file declares no scenarios".into(),
            ));
        }
        Ok(out)
    }
}

fn require_bound(p: &PairSpec) -> Result<f64, ConfigError> {
    p.bound.ok_or_else(|| {
        ConfigError::Invalid(format!(
            "pair ({}, {}): sign `{}` requires `bound`",
            p.treated, p.other, p.sign
        ))
    })
}
