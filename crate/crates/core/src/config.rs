//! Declarative experiment configuration read from TOML.
//!
//! ```toml
//! dataset = "data/cohort"
//! preset = "desk"
//! method = "da_ae_cr"
//! folds = 5
//! split_seed = 0
//! seeds = [1, 2, 3]
//!
//! [train]
//! epochs = 60
//! learning_rate = 0.003
//!
//! [loss_weights]
//! alpha = 1.0
//! lambda = 1.0
//! m = 4
//!
//! [augmentation]
//! jitter_sigma = 1.0
//!
//! [ae]
//! unlabeled_source = "active_selected"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::active::GmmSpace;
use crate::augment::AugmentationSpec;
use crate::autoencoder::AePretrainSpec;
use crate::error::{Error, Result};
use crate::eval::SweepGrid;
use crate::nn::NetworkSpec;
use crate::synth::SynthSpec;
use crate::trainer::{ActiveSpec, LossWeights, Method, ModelSelection, TrainSpec};

/// Scalar training overrides applied on top of the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub unlabeled_batch_ratio: Option<f64>,
    pub scaler_uses_unlabeled: Option<bool>,
    pub selection: Option<ModelSelection>,
    /// Replaces the preset network (input_dim is still taken from the data).
    pub network: Option<NetworkSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActiveOverrides {
    pub k_min: Option<usize>,
    pub k_max: Option<usize>,
    pub threshold: Option<f64>,
    /// `latent` or `pca:<d>`.
    pub gmm_space: Option<String>,
    pub latent_epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    pub preset: String,
    pub method: Method,
    pub folds: usize,
    pub split_seed: u64,
    pub seeds: Vec<u64>,
    pub train: TrainOverrides,
    pub loss_weights: Option<LossWeights>,
    pub augmentation: Option<AugmentationSpec>,
    pub ae: Option<AePretrainSpec>,
    pub active: Option<ActiveOverrides>,
    pub synth: Option<SynthSpec>,
    /// Sweep grid: `{ thresholds = [...] }` or `{ fractions = [...] }`.
    pub sweep: Option<SweepGrid>,
    /// Folds scored by `sweep` and `bench`.
    pub eval_folds: Option<Vec<usize>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            preset: "desk".into(),
            method: Method::DaAeCr,
            folds: 5,
            split_seed: 0,
            seeds: vec![0],
            train: TrainOverrides::default(),
            loss_weights: None,
            augmentation: None,
            ae: None,
            active: None,
            synth: None,
            sweep: None,
            eval_folds: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::format("config", e.to_string()))?;
        if cfg.folds < 2 {
            return Err(Error::invalid("folds", "need at least 2 folds"));
        }
        Ok(cfg)
    }

    /// Read a config; a relative `dataset` path resolves against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(d), Some(dir)) = (&cfg.dataset, path.parent()) {
            if d.is_relative() {
                cfg.dataset = Some(dir.join(d));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("config", e.to_string()))
    }

    /// Preset plus every override, for data with `input_dim` features.
    pub fn train_spec(&self, input_dim: usize) -> Result<TrainSpec> {
        let mut spec = TrainSpec::preset(&self.preset, input_dim)?;
        spec.method = self.method;
        let t = &self.train;
        if let Some(n) = &t.network {
            spec.network = NetworkSpec { input_dim, ..n.clone() };
        }
        spec.epochs = t.epochs.unwrap_or(spec.epochs);
        spec.batch_size = t.batch_size.unwrap_or(spec.batch_size);
        spec.learning_rate = t.learning_rate.unwrap_or(spec.learning_rate);
        spec.unlabeled_batch_ratio = t.unlabeled_batch_ratio.unwrap_or(spec.unlabeled_batch_ratio);
        spec.scaler_uses_unlabeled = t.scaler_uses_unlabeled.unwrap_or(spec.scaler_uses_unlabeled);
        spec.selection = t.selection.unwrap_or(spec.selection);
        if let Some(w) = self.loss_weights {
            spec.loss_weights = w;
        }
        if let Some(a) = &self.augmentation {
            spec.augmentation = a.clone();
        }
        if let Some(ae) = &self.ae {
            spec.ae = ae.clone();
        }
        if let Some(a) = &self.active {
            let d = &spec.active;
            spec.active = ActiveSpec {
                k_min: a.k_min.unwrap_or(d.k_min),
                k_max: a.k_max.unwrap_or(d.k_max),
                threshold: a.threshold.unwrap_or(d.threshold),
                gmm_space: match &a.gmm_space {
                    Some(s) => s.parse::<GmmSpace>()?,
                    None => d.gmm_space,
                },
                latent_epochs: a.latent_epochs.unwrap_or(d.latent_epochs),
            };
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn dataset_path(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::invalid("dataset", "config has no dataset path"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_example_parses() {
        let text = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start())
            .collect::<Vec<_>>()
            .join("\n");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
        let spec = cfg.train_spec(6).unwrap();
        assert_eq!(spec.epochs, 60);
        assert_eq!(spec.loss_weights.m, 4);
        assert_eq!(spec.augmentation.jitter_sigma, 1.0);
        assert_eq!(spec.ae.unlabeled_source, crate::autoencoder::UnlabeledSource::ActiveSelected);
        assert_eq!(spec.network.input_dim, 6);
    }

    #[test]
    fn round_trip_and_rejects_typos() {
        let cfg = ExperimentConfig {
            sweep: Some(SweepGrid::Fractions(vec![0.1, 0.5])),
            synth: Some(SynthSpec::default()),
            ..Default::default()
        };
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(ExperimentConfig::from_toml("methd = \"da\"").is_err());
        assert!(ExperimentConfig::from_toml("folds = 1").is_err());
        assert!(ExperimentConfig::from_toml("preset = \"huge\"").unwrap().train_spec(3).is_err());
    }
}
