use std::path::Path;

use anyhow::Context;
use hmb_core::dataset::{SynthKind, WindowSpec, DEFAULT_DT};
use hmb_core::models::{ModelConfig, ModelKind};
use hmb_core::nn::TrainConfig;
use hmb_core::saliency::{Grid, DEFAULT_NMS_RADIUS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

/// Synthetic dataset recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub kinds: Vec<SynthKind>,
    pub n_videos: usize,
    pub n_users: usize,
    pub duration_s: f64,
    /// Fraction of each kind's videos held out for testing (at least one).
    pub test_fraction: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            kinds: vec![SynthKind::StaticFocus],
            n_videos: 10,
            n_users: 16,
            duration_s: 30.0,
            test_fraction: 0.2,
        }
    }
}

/// One experiment, read from a JSON document; command-line flags override it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scale: Scale,
    pub synth: SynthSpec,
    pub history: usize,
    pub horizon: usize,
    pub t_start: f64,
    pub dt: f64,
    pub sigma_deg: f64,
    /// Saliency grid `[height, width]`; the scale's default when absent.
    pub grid: Option<[usize; 2]>,
    pub nms_radius_deg: f64,
    pub units: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub window_stride: usize,
    pub predictors: Vec<String>,
    pub category_quantile: f64,
    pub position_bins: usize,
    pub saliency_bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let w = WindowSpec::default();
        Self {
            seed: 0,
            scale: Scale::Desk,
            synth: SynthSpec::default(),
            history: w.history,
            horizon: w.horizon,
            t_start: w.t_start,
            dt: DEFAULT_DT,
            sigma_deg: 6.0,
            grid: None,
            nms_radius_deg: DEFAULT_NMS_RADIUS.to_degrees(),
            units: None,
            epochs: None,
            batch_size: None,
            learning_rate: None,
            window_stride: 20,
            predictors: ["static", "pos-only", "k-sal:1", "k-sal:5", "track"].map(String::from).to_vec(),
            category_quantile: 0.1,
            position_bins: 128,
            saliency_bins: 256,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_string()
    }

    /// `#` comment lines embedded in every text artifact.
    pub fn preamble(&self) -> Vec<String> {
        vec![format!("config_hash={} seed={}", self.hash(), self.seed)]
    }

    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec {
            history: self.history,
            horizon: self.horizon,
            t_start: self.t_start,
            dt: self.dt,
        }
    }

    pub fn grid(&self) -> Grid {
        match (self.grid, self.scale) {
            (Some([h, w]), _) => Grid::new(h, w),
            (None, Scale::Desk) => Grid::new(64, 64),
            (None, Scale::Paper) => Grid::new(256, 256),
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_deg.to_radians()
    }

    pub fn model_config(&self, kind: ModelKind) -> ModelConfig {
        let base = match self.scale {
            Scale::Desk => ModelConfig::desk(kind),
            Scale::Paper => ModelConfig::paper(kind),
        };
        ModelConfig {
            units: self.units.unwrap_or(base.units),
            grid: self.grid(),
            history: self.history,
            horizon: self.horizon,
            ..base
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let base = match self.scale {
            Scale::Desk => TrainConfig::desk(),
            Scale::Paper => TrainConfig::paper(),
        };
        TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            seed: self.seed,
            window_stride: self.window_stride,
            t_start: self.t_start,
            ..base
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.window_spec().validate()?;
        self.model_config(ModelKind::Track).validate()?;
        self.train_config().validate()?;
        anyhow::ensure!(self.sigma_deg > 0.0, "sigma_deg must be positive");
        anyhow::ensure!(self.nms_radius_deg > 0.0, "nms_radius_deg must be positive");
        anyhow::ensure!(
            self.synth.test_fraction > 0.0 && self.synth.test_fraction < 1.0,
            "synth.test_fraction must lie in (0, 1)"
        );
        anyhow::ensure!(!self.synth.kinds.is_empty(), "synth.kinds is empty");
        anyhow::ensure!(self.position_bins > 0 && self.saliency_bins > 0, "bin counts must be positive");
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_documents_fill_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"seed": 3, "synth": {"n_users": 2}}"#).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.synth.n_users, 2);
        assert_eq!(c.synth.n_videos, 10);
        assert_eq!(c.horizon, 25);
        c.validate().unwrap();
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn scale_switches_defaults() {
        let mut c = ExperimentConfig::default();
        assert_eq!(c.grid(), Grid::new(64, 64));
        c.scale = Scale::Paper;
        assert_eq!(c.grid(), Grid::new(256, 256));
        assert_eq!(c.train_config().epochs, 500);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"scale": "huge"}"#).is_err());
    }
}
