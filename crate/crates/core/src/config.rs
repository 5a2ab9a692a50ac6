//! Experiment configuration: one JSON document, validated before any work.
//! Defaults are the desk-scale presets; paper-scale values are noted where
//! they differ.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::Curvature;
use crate::nn::{Backbone, EncoderConfig, HierarchySpec, Levels, ModelConfig, Resynthesis};
use crate::optim::OptimConfig;
use crate::scene::{DatasetConfig, DensityPreset, DensitySplit, RenderConfig, DEFAULT_TAU};
use crate::train::TrainConfig;

/// Encoder settings; the input width follows from the STFT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSettings {
    pub backbone: Backbone,
    /// Context radius in frames (feedforward backbone only).
    pub context: usize,
    /// Desk: `[128, 128]`. Paper: four layers of 600.
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    /// Desk: 0. Paper: 0.3.
    pub dropout: f64,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        let e = EncoderConfig::desk(1);
        Self {
            backbone: e.backbone,
            context: e.context,
            hidden: e.hidden,
            embed_dim: e.embed_dim,
            dropout: e.dropout,
        }
    }
}

impl EncoderSettings {
    pub fn paper() -> Self {
        let e = EncoderConfig::paper(1);
        Self {
            backbone: e.backbone,
            context: e.context,
            hidden: e.hidden,
            embed_dim: e.embed_dim,
            dropout: e.dropout,
        }
    }

    pub fn build(&self, bins: usize) -> EncoderConfig {
        EncoderConfig {
            bins,
            context: self.context,
            hidden: self.hidden.clone(),
            embed_dim: self.embed_dim,
            dropout: self.dropout,
            backbone: self.backbone,
        }
    }
}

/// Scene counts for the desk presets, spread over densities in the
/// published proportions. Ignored when `densities` is set explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    /// Per density.
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 200,
            val: 40,
            test: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSettings {
    /// Relative distances for the equidistant probe, meters.
    pub deltas: Vec<f64>,
    /// Near-source distances for the mic-distance probe, meters.
    pub near_distances: Vec<f64>,
    pub rooms_per_condition: usize,
    pub histogram_bins: usize,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            deltas: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4],
            near_distances: vec![0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
            rooms_per_condition: 10,
            histogram_bins: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    /// Desk: 50. Paper: 200 (one level) or 300 (two levels).
    pub epochs: usize,
    /// Desk: 8. Paper: 96.
    pub batch_size: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::desk();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Near/far threshold in meters.
    pub tau: f64,
    /// Children per parent: 2 or 3.
    pub children: usize,
    pub levels: Levels,
    /// `c <= 0`; 0 is the Euclidean head.
    pub curvature: f64,
    /// Curvatures trained by `sweep`.
    pub sweep_curvatures: Vec<f64>,
    pub resynthesis: Resynthesis,
    /// Desk: 16 kHz, 6 s chunks. The STFT is fixed at 32 ms, 50% overlap.
    pub render: RenderConfig,
    pub density_preset: DensityPreset,
    pub split_sizes: SplitSizes,
    /// Explicit per-density counts; overrides the preset.
    pub densities: Option<Vec<DensitySplit>>,
    pub encoder: EncoderSettings,
    pub optim: OptimConfig,
    pub train: TrainSettings,
    pub probe: ProbeSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tau: DEFAULT_TAU,
            children: 2,
            levels: Levels::Two,
            curvature: -1.0,
            sweep_curvatures: crate::train::SWEEP_CURVATURES.to_vec(),
            resynthesis: Resynthesis::Joint,
            render: RenderConfig {
                sample_rate: 16_000,
                seconds: crate::scene::CHUNK_SECONDS,
            },
            density_preset: DensityPreset::Table1Desk,
            split_sizes: SplitSizes::default(),
            densities: None,
            encoder: EncoderSettings::default(),
            optim: OptimConfig::default(),
            train: TrainSettings::default(),
            probe: ProbeSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let json = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be a positive distance, got {}", self.tau)));
        }
        Curvature::new(self.curvature)?;
        for &c in &self.sweep_curvatures {
            Curvature::new(c)?;
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be >= 1".into()));
        }
        let p = &self.probe;
        if p.rooms_per_condition == 0 || p.histogram_bins == 0 {
            return Err(Error::Config("probe rooms and histogram bins must be >= 1".into()));
        }
        self.dataset()?.validate()?;
        self.model(1)?.validate()?;
        self.train_config().optim.validate()
    }

    pub fn hierarchy(&self) -> Result<HierarchySpec> {
        HierarchySpec::new(self.children)
    }

    pub fn dataset(&self) -> Result<DatasetConfig> {
        let s = self.split_sizes;
        let densities = match &self.densities {
            Some(d) => d.clone(),
            None => self.density_preset.splits(s.train, s.val, s.test),
        };
        Ok(DatasetConfig {
            seed: self.seed,
            tau: self.tau,
            hierarchy: self.hierarchy()?,
            render: self.render,
            densities,
        })
    }

    pub fn model(&self, bins: usize) -> Result<ModelConfig> {
        Ok(ModelConfig {
            encoder: self.encoder.build(bins),
            hierarchy: self.hierarchy()?,
            levels: self.levels,
            curvature: Curvature::new(self.curvature)?,
            resynthesis: self.resynthesis,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: self.seed,
            optim: self.optim,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        cfg.save(&path).unwrap();
        assert_eq!(ExperimentConfig::load(&path).unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"seed": 1, "learning_rate": 0.1}"#);
        assert!(err.is_err());
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"train": {"epochs": 3, "batch": 2}}"#);
        assert!(err.is_err());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"tau": 1.0, "train": {"epochs": 3}}"#).unwrap();
        assert_eq!(cfg.tau, 1.0);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 8);
    }

    #[test]
    fn invalid_values_fail_validation() {
        let bad = [
            ExperimentConfig { tau: -0.5, ..Default::default() },
            ExperimentConfig { curvature: 0.3, ..Default::default() },
            ExperimentConfig { children: 4, ..Default::default() },
            ExperimentConfig {
                train: TrainSettings { epochs: 0, batch_size: 8 },
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_)) | Err(Error::InvalidCurvature(_))), "{cfg:?}");
        }
    }
}
