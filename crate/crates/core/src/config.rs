//! Experiment configuration: TOML with nested sections, unknown keys
//! rejected, validated before any work starts. A fully commented example
//! ships in `configs/default.toml`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::TrainConfig;
use crate::prior::PriorConfig;
use crate::synthetic::{RunConfig, SynthConfig};

/// Which prior supervises the gaze head during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// KL against per-clip fixation priors.
    Gaze,
    /// KL against the weak uniform prior (training without gaze).
    Uniform,
    /// Deterministic gaze head with per-cell cross entropy (MLE baseline).
    Mle,
    /// No gaze supervision; fixed uniform attention.
    None,
}

/// Model widths not fixed by the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub h: usize,
    pub c: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { h: 64, c: 32 }
    }
}

/// Everything one run needs. `seed`, when present, overrides both the
/// training and generator seeds; the CLI `--seed` flag overrides it in turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub prior_mode: PriorMode,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub prior: PriorConfig,
    pub synth: SynthConfig,
    /// Weight on the gaze-MLE per-cell cross entropy.
    pub mle_bce_weight: f64,
    /// "micro" pools TP/FP/FN across clips; "macro" averages per-clip P/R.
    pub macro_pr: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: None,
            prior_mode: PriorMode::Gaze,
            model: ModelSection::default(),
            train: TrainConfig::default(),
            prior: PriorConfig::default(),
            synth: SynthConfig::default(),
            mle_bce_weight: 1.0,
            macro_pr: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Push the master seed (when set) into every seeded component.
    pub fn apply_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.train.seed = seed;
            self.synth.seed = seed;
        }
    }

    /// Forces a master seed (CLI `--seed` override).
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.apply_seed();
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.prior.validate()?;
        self.synth.validate()?;
        if self.model.h == 0 || self.model.c == 0 {
            return Err(Error::InvalidParameter("model.h and model.c must be >= 1".into()));
        }
        if self.mle_bce_weight < 0.0 {
            return Err(Error::InvalidParameter("mle_bce_weight must be >= 0".into()));
        }
        Ok(())
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            train: self.train,
            h: self.model.h,
            c: self.model.c,
            prior: self.prior,
            pr_averaging: if self.macro_pr {
                crate::metrics::PrAveraging::Macro
            } else {
                crate::metrics::PrAveraging::Micro
            },
            mle_bce_weight: self.mle_bce_weight,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_validate() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn reference_recipe_defaults() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.train.lr0, 0.032);
        assert_eq!(cfg.train.momentum, 0.9);
        assert_eq!(cfg.train.weight_decay, 4e-5);
        assert_eq!(cfg.train.decay_epoch, 40);
        assert_eq!(cfg.train.total_epochs, 80);
        assert_eq!(cfg.train.tau, 2.0);
        assert_eq!(cfg.train.dropout, 0.7);
        assert_eq!(cfg.prior.window_frames, 8);
        assert_eq!(cfg.synth.shape.m, 7);
        assert_eq!(cfg.synth.shape.n, 7);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml("bogus_key = 1").is_err());
        assert!(ExperimentConfig::from_toml("[train]\nbogus = 2").is_err());
    }

    #[test]
    fn master_seed_propagates() {
        let cfg = ExperimentConfig::from_toml("seed = 99").unwrap();
        assert_eq!(cfg.train.seed, 99);
        assert_eq!(cfg.synth.seed, 99);
    }

    #[test]
    fn override_beats_config_seed() {
        let mut cfg = ExperimentConfig::from_toml("seed = 99").unwrap();
        cfg.override_seed(7);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.synth.seed, 7);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::from_toml("[train]\nlr0 = 0.0").is_err());
        assert!(ExperimentConfig::from_toml("[train]\ndropout = 1.5").is_err());
        assert!(ExperimentConfig::from_toml("[prior]\nsigma_cells = -1.0").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
