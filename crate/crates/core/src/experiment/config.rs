use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::SampleGrid;
use crate::experiment::inline::InlineModel;
use crate::hybrid::IntegratorConfig;
use crate::information::{EventNoise, NoiseModel, DEFAULT_EPSILON};
use crate::linalg::from_rows;
use crate::sensitivity::PropagationMode;

pub const SCHEMA_VERSION: u32 = 1;

/// Either a builtin model, optionally with its parameter struct as
/// `options`, or an inline model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub options: Option<serde_json::Value>,
    #[serde(default)]
    pub inline: Option<InlineModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EventNoiseConfig {
    #[default]
    SameAsFlow,
    Disabled,
    /// `V_j = scale · V`.
    Scale(f64),
    Variances(Vec<f64>),
    Covariance(Vec<Vec<f64>>),
}

/// Flow covariance `V` as a diagonal or a full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub variances: Option<Vec<f64>>,
    #[serde(default)]
    pub covariance: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub events: EventNoiseConfig,
}

impl NoiseConfig {
    pub fn build(&self) -> Result<NoiseModel> {
        let base = match (&self.variances, &self.covariance) {
            (Some(v), None) => NoiseModel::diagonal(v)?,
            (None, Some(c)) => NoiseModel::new(from_rows(c)?)?,
            _ => {
                return Err(Error::Config(
                    "noise needs exactly one of 'variances' or 'covariance'".into(),
                ))
            }
        };
        let events = match &self.events {
            EventNoiseConfig::SameAsFlow => EventNoise::SameAsFlow,
            EventNoiseConfig::Disabled => EventNoise::Disabled,
            EventNoiseConfig::Scale(s) => {
                if !(*s > 0.0) || !s.is_finite() {
                    return Err(Error::Config("event noise scale must be positive".into()));
                }
                EventNoise::Shared(base.flow_cov() * *s)
            }
            EventNoiseConfig::Variances(v) => EventNoise::Shared(DMatrix::from_diagonal(
                &nalgebra::DVector::from_column_slice(v),
            )),
            EventNoiseConfig::Covariance(c) => EventNoise::Shared(from_rows(c)?),
        };
        base.with_event_noise(events)
    }
}

/// Sliding HPE windows; a single full-horizon window when the section is absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpeConfig {
    pub mu_t: f64,
    pub mu_j: usize,
    /// `mu_t` when absent.
    #[serde(default)]
    pub stride: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid: SampleGrid,
    /// The nominal parameters when absent.
    #[serde(default)]
    pub theta_init: Option<Vec<f64>>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

fn default_max_iters() -> usize {
    100
}

fn default_modes() -> Vec<PropagationMode> {
    PropagationMode::ALL.to_vec()
}

fn default_emit() -> PathBuf {
    PathBuf::from("out")
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    /// Overrides of the nominal parameters, by name.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub horizon: f64,
    /// Measured signals by name; every model output when absent.
    #[serde(default)]
    pub outputs: Option<Vec<String>>,
    pub noise: NoiseConfig,
    #[serde(default = "default_modes")]
    pub propagation: Vec<PropagationMode>,
    #[serde(default)]
    pub hpe: Option<HpeConfig>,
    #[serde(default)]
    pub montecarlo: Option<MonteCarloSection>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    /// Regularizer for log-determinants.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_emit")]
    pub emit: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse a config file; a relative `emit` is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if cfg.emit.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.emit = dir.join(&cfg.emit);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Config("horizon must be positive and finite".into()));
        }
        if self.propagation.is_empty() {
            return Err(Error::Config(
                "at least one propagation mode is required".into(),
            ));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config("epsilon must be non-negative".into()));
        }
        if let Some(h) = &self.hpe {
            if !(h.mu_t > 0.0) || h.stride.is_some_and(|s| !(s > 0.0)) {
                return Err(Error::Config(
                    "hpe window length and stride must be positive".into(),
                ));
            }
        }
        if let Some(mc) = &self.montecarlo {
            if mc.max_iters == 0 {
                return Err(Error::Config(
                    "montecarlo.max_iters must be positive".into(),
                ));
            }
        }
        self.integrator.validate()?;
        match (&self.model.builtin, &self.model.inline) {
            (Some(_), None) => {}
            (None, Some(_)) if self.model.options.is_none() => {}
            _ => {
                return Err(Error::Config(
                    "model needs exactly one of 'builtin' or 'inline'".into(),
                ))
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"{"schema_version": 1, "model": {"builtin": "buck_dcm"}, "horizon": 0.001,
                          "noise": {"variances": [1e-4]}}"#;

    #[test]
    fn minimal_config_defaults() {
        let c = ExperimentConfig::from_json(MIN).unwrap();
        assert_eq!(c.propagation.len(), 3);
        assert_eq!(c.epsilon, 1e-14);
        assert_eq!(c.emit, PathBuf::from("out"));
        assert!(c.noise.build().unwrap().event_cov(0).is_some());
    }

    #[test]
    fn bad_configs_rejected() {
        let bad = [
            MIN.replace("\"schema_version\": 1", "\"schema_version\": 2"),
            MIN.replace("0.001", "-1"),
            MIN.replace("\"horizon\"", "\"horizon_typo\": 1, \"horizon\""),
            MIN.replace(
                "{\"variances\": [1e-4]}",
                "{\"variances\": [1e-4], \"covariance\": [[1]]}",
            ),
        ];
        for b in bad {
            let r = ExperimentConfig::from_json(&b).and_then(|c| c.noise.build().map(|_| c));
            assert!(matches!(r, Err(e) if e.is_validation()), "{b}");
        }
    }

    #[test]
    fn event_noise_forms() {
        let n: NoiseConfig =
            serde_json::from_str(r#"{"variances": [2.0], "events": {"scale": 10}}"#).unwrap();
        assert_eq!(n.build().unwrap().event_cov(3).unwrap()[(0, 0)], 20.0);
        let n: NoiseConfig =
            serde_json::from_str(r#"{"variances": [2.0], "events": "disabled"}"#).unwrap();
        assert!(n.build().unwrap().event_cov(0).is_none());
    }
}
