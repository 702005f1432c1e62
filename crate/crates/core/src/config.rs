//! TOML run configuration. Every key is optional; missing keys take the
//! defaults shown by `stereolift config`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::action::ActionConfig;
use crate::error::{Error, Result};
use crate::geosearch::SearchConfig;
use crate::lifting::NetShape;
use crate::neuralnet::TrainConfig;
use crate::pipeline::LabelConfig;
use crate::synthgen::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionSettings {
    pub n_per_class: usize,
    pub classifier: ActionConfig,
    pub train: TrainConfig,
}

impl Default for ActionSettings {
    fn default() -> Self {
        ActionSettings {
            n_per_class: 200,
            classifier: ActionConfig::default(),
            train: TrainConfig {
                epochs: 40,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSettings {
    /// Baselines compared by the ablation table, mm.
    pub dx_values: Vec<f64>,
    /// Pairs generated per ablation run.
    pub ablation_pairs: u64,
    pub histogram_bin_mm: f64,
}

impl Default for ReportSettings {
    fn default() -> Self {
        ReportSettings {
            dx_values: vec![250.0, 500.0, 750.0],
            ablation_pairs: 5000,
            histogram_bin_mm: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Held-out fraction for train/test splits.
    pub test_fraction: f64,
    pub synth: SynthConfig,
    pub net: NetShape,
    pub train: TrainConfig,
    pub search: SearchConfig,
    pub label: LabelConfig,
    pub action: ActionSettings,
    pub report: ReportSettings,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            test_fraction: 0.1,
            synth: SynthConfig::default(),
            net: NetShape::default(),
            train: TrainConfig::default(),
            search: SearchConfig::default(),
            label: LabelConfig::default(),
            action: ActionSettings::default(),
            report: ReportSettings::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Points every component seed at `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.net.seed = seed;
        self.train.seed = seed;
        self.action.classifier.seed = seed;
        self.action.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::InvalidConfig("test_fraction must lie in [0, 1)".into()));
        }
        self.synth.validate()?;
        self.net.mlp(1, 1).validate()?;
        self.train.validate()?;
        self.search.validate()?;
        self.action.train.validate()?;
        if !(self.label.default_focal > 0.0) {
            return Err(Error::InvalidConfig("label.default_focal must be positive".into()));
        }
        if self.action.n_per_class == 0 {
            return Err(Error::InvalidConfig("action.n_per_class must be at least 1".into()));
        }
        if self.report.dx_values.iter().any(|d| !(*d > 0.0)) || !(self.report.histogram_bin_mm > 0.0) {
            return Err(Error::InvalidConfig("report baselines and bin width must be positive".into()));
        }
        Ok(())
    }
}
