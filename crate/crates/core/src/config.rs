//! Declarative experiment configuration in TOML. Every table is optional and
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::GenParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
    pub gen: Option<GenParams>,
    pub gd: Option<GdConfig>,
    pub sgd: Option<SgdConfig>,
    pub block: Option<BlockConfig>,
    pub montecarlo: Option<MonteCarloConfig>,
    pub verify: Option<VerifyConfig>,
}

/// Dataset location shared by the run commands.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub data: Option<PathBuf>,
    pub certificate: Option<PathBuf>,
    /// Margin to use instead of the certificate's.
    pub gamma: Option<f64>,
    /// Divide features by the largest row norm on load.
    #[serde(default)]
    pub rescale: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GdConfig {
    #[serde(flatten)]
    pub source: DataSource,
    pub steps: Option<usize>,
    /// Step size of the constant-step baseline.
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    #[serde(flatten)]
    pub source: DataSource,
    pub epsilon: Option<f64>,
    pub cap: Option<usize>,
    pub record_stride: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    #[serde(flatten)]
    pub source: DataSource,
    pub eps0: Option<f64>,
    pub delta: Option<f64>,
    pub target_eps: Option<f64>,
    /// Evaluate the full loss at every iterate instead of only until decided.
    pub every_step: Option<bool>,
    pub record_stride: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    #[serde(flatten)]
    pub source: DataSource,
    pub epsilon: Option<f64>,
    pub cap: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub deltas: Vec<f64>,
    pub audit: Option<bool>,
    pub record_stride: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(flatten)]
    pub source: DataSource,
    pub draws: Option<usize>,
    pub gd_steps: Option<usize>,
    pub schedule_steps: Option<usize>,
    pub sgd_epsilon: Option<f64>,
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
out_dir = "runs"
seeds = [0, 1, 2]

[gen]
dim = 80
count = 1500
margin = 0.5
seed = 7

[gd]
data = "runs/gd.csv"
steps = 5000
eta = 2.0

[sgd]
data = "runs/sgd.csv"
certificate = "runs/sgd.cert.toml"
epsilon = 0.01
record_stride = 10

[block]
data = "runs/block.csv"
gamma = 0.2
eps0 = 0.4
delta = 0.2
target_eps = 0.1
every_step = false

[montecarlo]
data = "runs/sgd.csv"
epsilon = 0.01
deltas = [0.5, 0.2]
audit = true

[verify]
data = "runs/gd.csv"
rescale = true
draws = 50
"#;

    #[test]
    fn parses_and_round_trips() {
        let config = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(config.seeds, vec![0, 1, 2]);
        assert_eq!(config.gen.unwrap().dim, 80);
        assert_eq!(config.block.as_ref().unwrap().source.gamma, Some(0.2));
        assert!(config.verify.as_ref().unwrap().source.rescale);
        let again = ExperimentConfig::from_toml(&config.to_toml().unwrap()).unwrap();
        assert_eq!(again, config);
    }

    #[test]
    fn empty_config_is_valid() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("[gd]\nstepz = 3").is_err());
        assert!(ExperimentConfig::from_toml("[gen]\ndim = 3\ncount = 2\nmargin = 0.1\nseed = 1\nextra = 0").is_err());
    }
}
