//! Run configuration: one TOML file with [data], [model], [train] and [run]
//! sections. Every field defaults to the documented decision, so a minimal
//! file needs only the dataset path; the effective config is echoed into the
//! run directory before any long computation starts.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use umamba::data::Dataset;
use umamba::model::ModelConfig;
use umamba::mtsp::{ChannelMode, SkipPath};
use umamba::ssm::DiscretizeMode;
use umamba::train::TrainSettings;
use umamba::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// CSV file with a timestamp column followed by one column per channel.
    pub path: String,
    /// Dataset name for manifest checks and batch-size defaults; inferred
    /// from the file stem when absent.
    pub name: Option<String>,
    pub lookback: usize,
    pub horizon: usize,
    /// Train / validation / test row fractions.
    pub split: [f64; 3],
    /// Let validation and test windows reach back into the preceding segment
    /// for lookback rows.
    pub border_lookback: bool,
    /// Fraction of the training segment actually used (front-truncated).
    pub train_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            path: String::new(),
            name: None,
            lookback: 96,
            horizon: 96,
            split: [0.7, 0.2, 0.1],
            border_lookback: false,
            train_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// "umamba", or baselines "linear" / "repeat_last".
    pub kind: String,
    pub scales: Vec<usize>,
    pub k: usize,
    pub d_state: usize,
    pub conv_width: usize,
    pub expand: usize,
    pub dropout: f64,
    /// "independence" | "parallel" | "integration".
    pub channel_mode: String,
    /// "input" | "residual".
    pub skip_path: String,
    pub use_rml: bool,
    pub use_cam: bool,
    pub share_rml_weights: bool,
    pub per_channel_tokenizer: bool,
    pub extra_projection: bool,
    pub euler_discretization: bool,
    pub revin_affine: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: "umamba".into(),
            scales: vec![256, 128, 64],
            k: 3,
            d_state: 16,
            conv_width: 4,
            expand: 2,
            dropout: 0.1,
            channel_mode: "integration".into(),
            skip_path: "input".into(),
            use_rml: true,
            use_cam: true,
            share_rml_weights: false,
            per_channel_tokenizer: false,
            extra_projection: false,
            euler_discretization: false,
            revin_affine: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    /// Minibatch size; when absent a per-dataset default applies
    /// (ETT 32, weather 16, electricity and traffic 8, anything else 32).
    pub batch_size: Option<usize>,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_after: usize,
    pub clip_norm: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 20,
            batch_size: None,
            lr: 1e-3,
            lr_decay: 0.8,
            decay_after: 3,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Empty means a fresh runs/<timestamp>-seed<seed> directory.
    pub outdir: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { seed: 1, outdir: String::new() }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match self.model.kind.as_str() {
            "umamba" | "linear" | "repeat_last" => {}
            other => {
                return Err(Error::Config(format!(
                    "model.kind must be umamba | linear | repeat_last, got '{other}'"
                )))
            }
        }
        ChannelMode::parse(&self.model.channel_mode)?;
        SkipPath::parse(&self.model.skip_path)?;
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "data.train_fraction must lie in (0, 1], got {}",
                self.data.train_fraction
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Write the effective config into the run directory.
    pub fn echo(&self, outdir: &Path) -> Result<()> {
        std::fs::write(outdir.join("config.toml"), self.to_toml())?;
        Ok(())
    }

    /// Dataset name: declared, else the file stem.
    pub fn dataset_name(&self) -> Option<String> {
        if let Some(name) = &self.data.name {
            return Some(name.clone());
        }
        Path::new(&self.data.path).file_stem().map(|s| s.to_string_lossy().into_owned())
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        if self.data.path.is_empty() {
            return Err(Error::Config("data.path is not set".into()));
        }
        let path = Path::new(&self.data.path);
        if !path.exists() {
            return Err(Error::Config(format!(
                "data.path: no such file {}",
                path.display()
            )));
        }
        Dataset::load_csv(path, self.data.name.as_deref())
    }

    pub fn model_config(&self, n_channels: usize) -> Result<ModelConfig> {
        let m = &self.model;
        let cfg = ModelConfig {
            scales: m.scales.clone(),
            k: m.k,
            channel_mode: ChannelMode::parse(&m.channel_mode)?,
            dropout: m.dropout,
            expand: m.expand,
            d_state: m.d_state,
            conv_width: m.conv_width,
            use_rml: m.use_rml,
            use_cam: m.use_cam,
            discretize: if m.euler_discretization {
                DiscretizeMode::Euler
            } else {
                DiscretizeMode::Zoh
            },
            share_rml: m.share_rml_weights,
            skip_path: SkipPath::parse(&m.skip_path)?,
            per_channel_tokenizer: m.per_channel_tokenizer,
            extra_projection: m.extra_projection,
            revin_affine: m.revin_affine,
            ..ModelConfig::new(n_channels, self.data.lookback, self.data.horizon)
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_settings(&self) -> TrainSettings {
        let name = self.dataset_name().unwrap_or_default();
        let batch = self.train.batch_size.unwrap_or_else(|| default_batch(&name));
        TrainSettings {
            epochs: self.train.epochs,
            batch_size: batch,
            lr: self.train.lr,
            lr_decay: self.train.lr_decay,
            decay_after: self.train.decay_after,
            clip_norm: self.train.clip_norm,
            seed: self.run.seed,
        }
    }

    /// Run directory: explicit flag, then the config's outdir, then a fresh
    /// timestamped default.
    pub fn resolve_outdir(&self, flag: Option<&str>) -> PathBuf {
        if let Some(dir) = flag {
            return PathBuf::from(dir);
        }
        if !self.run.outdir.is_empty() {
            return PathBuf::from(&self.run.outdir);
        }
        let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
        PathBuf::from(format!("runs/{stamp}-seed{}", self.run.seed))
    }
}

/// Paper protocol: batch size varies with the dataset.
pub fn default_batch(dataset_name: &str) -> usize {
    let lower = dataset_name.to_ascii_lowercase();
    if lower.starts_with("ett") {
        32
    } else if lower.starts_with("weather") {
        16
    } else if lower.starts_with("electricity") || lower.starts_with("traffic") {
        8
    } else {
        32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_every_field() {
        let mut cfg = RunConfig::default();
        cfg.data.path = "data/ETTh1.csv".into();
        cfg.data.name = Some("ETTh1".into());
        cfg.data.lookback = 48;
        cfg.data.border_lookback = true;
        cfg.data.train_fraction = 0.5;
        cfg.model.scales = vec![64, 32];
        cfg.model.channel_mode = "parallel".into();
        cfg.model.euler_discretization = true;
        cfg.train.batch_size = Some(4);
        cfg.run.seed = 99;
        cfg.run.outdir = "runs/custom".into();
        let parsed: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn defaults_match_documented_decisions() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.data.lookback, 96);
        assert_eq!(cfg.data.split, [0.7, 0.2, 0.1]);
        assert!(!cfg.data.border_lookback);
        assert_eq!(cfg.model.scales, vec![256, 128, 64]);
        assert_eq!(cfg.model.k, 3);
        assert_eq!(cfg.model.d_state, 16);
        assert_eq!(cfg.model.dropout, 0.1);
        assert_eq!(cfg.model.channel_mode, "integration");
        assert_eq!(cfg.model.skip_path, "input");
        assert!(!cfg.model.euler_discretization);
        assert_eq!(cfg.train.epochs, 20);
        assert_eq!(cfg.train.lr, 1e-3);
        assert_eq!(cfg.train.lr_decay, 0.8);
        assert_eq!(cfg.train.decay_after, 3);
        assert_eq!(cfg.train.clip_norm, 5.0);
        assert_eq!(cfg.run.seed, 1);
    }

    #[test]
    fn unknown_key_is_rejected_with_location() {
        let err = toml::from_str::<RunConfig>("[model]\nwidht = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("widht"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn missing_dataset_path_names_the_key() {
        let cfg = RunConfig::default();
        let err = cfg.load_dataset().unwrap_err();
        assert!(err.to_string().contains("data.path"), "{err}");
    }

    #[test]
    fn per_dataset_batch_defaults() {
        assert_eq!(default_batch("ETTh1"), 32);
        assert_eq!(default_batch("ETTm2"), 32);
        assert_eq!(default_batch("weather"), 16);
        assert_eq!(default_batch("electricity"), 8);
        assert_eq!(default_batch("traffic"), 8);
        assert_eq!(default_batch("mystery"), 32);
    }

    #[test]
    fn bad_channel_mode_rejected() {
        let cfg_text = "[model]\nchannel_mode = \"mixed\"\n";
        let cfg: RunConfig = toml::from_str(cfg_text).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn model_config_reflects_flags() {
        let mut cfg = RunConfig::default();
        cfg.data.lookback = 32;
        cfg.data.horizon = 16;
        cfg.model.scales = vec![24, 12];
        cfg.model.euler_discretization = true;
        cfg.model.share_rml_weights = true;
        let mc = cfg.model_config(3).unwrap();
        assert_eq!(mc.n_channels, 3);
        assert_eq!(mc.lookback, 32);
        assert_eq!(mc.horizon, 16);
        assert_eq!(mc.scales, vec![24, 12]);
        assert_eq!(mc.discretize, DiscretizeMode::Euler);
        assert!(mc.share_rml);
    }

    #[test]
    fn outdir_resolution_order() {
        let mut cfg = RunConfig::default();
        assert!(cfg.resolve_outdir(None).starts_with("runs"));
        cfg.run.outdir = "runs/fixed".into();
        assert_eq!(cfg.resolve_outdir(None), PathBuf::from("runs/fixed"));
        assert_eq!(cfg.resolve_outdir(Some("elsewhere")), PathBuf::from("elsewhere"));
    }
}
