//! Run configuration shared by every pipeline stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datapipe::SplitConfig;
use crate::dynamics::{DmTrainConfig, RuleBasedParams};
use crate::encoders::EncoderSpec;
use crate::error::{invalid, Result};
use crate::rcm::RcmConfig;
use crate::vehicle::DEFAULT_DT;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    /// Overrides every golden script's duration, seconds.
    pub duration: Option<f64>,
    pub training_logs: usize,
    pub training_duration: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            duration: None,
            training_logs: 30,
            training_duration: 120.0,
        }
    }
}

/// Which open-loop model labels residuals and underlies the DRF.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DmChoice {
    RuleBased,
    /// Trained on the training logs by `train-dm` (or on demand by `prepare`).
    Learned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DmConfig {
    pub kind: DmChoice,
    /// Rule-based parameters; the oracle's nominal calibration when absent.
    pub rule_based: Option<RuleBasedParams>,
    pub train: DmTrainConfig,
    /// Fraction of training logs held out for DM-LB validation.
    pub val_fraction: f64,
}

impl Default for DmConfig {
    fn default() -> Self {
        DmConfig {
            kind: DmChoice::RuleBased,
            rule_based: None,
            train: DmTrainConfig::default(),
            val_fraction: 0.2,
        }
    }
}

/// Hyper-parameter grid; every combination is one leaderboard entry.
/// Empty axes keep the base configuration's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneGrid {
    pub batch: Vec<usize>,
    pub inducing: Vec<usize>,
    pub lr: Vec<f64>,
    pub dropout: Vec<f64>,
    pub latent_dim: Vec<usize>,
    pub kernel: Vec<usize>,
    pub ff_dim: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneConfig {
    pub grid: TuneGrid,
    /// Epochs per grid point.
    pub epochs: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            grid: TuneGrid {
                batch: vec![128, 256],
                inducing: vec![64, 128],
                ..Default::default()
            },
            epochs: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dt: f64,
    pub seed: u64,
    pub generate: GenerateConfig,
    pub split: SplitConfig,
    pub dm: DmConfig,
    pub rcm: RcmConfig,
    pub tune: TuneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dt: DEFAULT_DT,
            seed: 0,
            generate: GenerateConfig::default(),
            split: SplitConfig::default(),
            dm: DmConfig::default(),
            rcm: RcmConfig::default(),
            tune: TuneConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Propagates the top-level seed into every stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.split.seed = seed;
        self.dm.train.seed = seed;
        self.rcm.gp.seed = seed;
        self
    }

    pub fn with_encoder(mut self, encoder: EncoderSpec) -> Self {
        self.rcm.encoder = encoder;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        let g = &self.generate;
        if g.duration.is_some_and(|d| !(d > 0.0)) || !(g.training_duration > 0.0) {
            return Err(invalid("durations must be positive"));
        }
        if !(0.0..1.0).contains(&self.dm.val_fraction) {
            return Err(invalid("dm.val_fraction must be in [0, 1)"));
        }
        if let Some(p) = &self.dm.rule_based {
            p.validate()?;
        }
        if self.tune.epochs == 0 {
            return Err(invalid("tune.epochs must be positive"));
        }
        self.split.validate()?;
        self.rcm.validate()
    }

    pub fn rule_based(&self) -> RuleBasedParams {
        self.dm.rule_based.unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_and_validates() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
        assert_eq!(serde_json::from_str::<RunConfig>("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_and_bad_windows_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"dtt": 0.01}"#).is_err());
        let partial: RunConfig = serde_json::from_str(r#"{"rcm": {"gp": {"epochs": 3}}}"#).unwrap();
        assert_eq!((partial.rcm.gp.epochs, partial.rcm.gp.inducing), (3, 128));
        let mut cfg = RunConfig::default();
        cfg.rcm.window = 10;
        assert!(cfg.validate().is_err());
    }
}
