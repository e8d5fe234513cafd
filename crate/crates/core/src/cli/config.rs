use std::path::{Path, PathBuf};

use agri_autograd::{LrSchedule, OptimizerSpec};
use serde::{Deserialize, Serialize};

use crate::contrastcore::{ContrastConfig, Method, PretrainConfig};
use crate::encoders::{EncoderSpec, Family};
use crate::evalsuite::{ProbeProtocol, SegConfig};
use crate::fieldstore::SynthConfig;
use crate::viewfactory::AugmentConfig;

pub const PRESETS: [&str; 2] = ["desk", "paper-scale"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Fields drawn by the procedural generator.
    Synthetic,
    /// Tiles written by the `tile` command, located through their manifest.
    Tiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticData {
    pub seed: u64,
    pub fields: usize,
    pub field: SynthConfig,
}

impl Default for SyntheticData {
    fn default() -> Self {
        SyntheticData {
            seed: 100,
            fields: 16,
            field: SynthConfig {
                flights: 4,
                illumination: 0.15,
                ..Default::default()
            },
        }
    }
}

/// Pre-training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Tile manifest for `source = "tiles"`.
    pub manifest: Option<PathBuf>,
    /// Directory holding `rgb/` and `nir/` (default: the manifest's directory).
    pub tiles_dir: Option<PathBuf>,
    pub synthetic: SyntheticData,
    /// Pre-train on a seeded random subset of this many revisit groups
    /// (tile data: flights). All of them when unset.
    pub flights: Option<usize>,
    /// Side of the co-registered stacks cut from synthetic fields.
    pub tile_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            manifest: None,
            tiles_dir: None,
            synthetic: SyntheticData::default(),
            flights: None,
            tile_size: 64,
        }
    }
}

/// Labelled synthetic data for the downstream protocols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalDataConfig {
    pub train_seed: u64,
    pub train_fields: usize,
    pub val_seed: u64,
    pub val_fields: usize,
    /// Image side of classification and segmentation samples.
    pub crop: usize,
    pub field: SynthConfig,
    /// Fields of the segmentation set, split by flight into train / val / test.
    pub segmentation_fields: usize,
    pub split: (f64, f64, f64),
}

impl Default for EvalDataConfig {
    fn default() -> Self {
        EvalDataConfig {
            train_seed: 200,
            train_fields: 40,
            val_seed: 300,
            val_fields: 40,
            crop: 32,
            field: SyntheticData::default().field,
            segmentation_fields: 24,
            split: (0.7, 0.15, 0.15),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Pre-training subset sizes, in revisit groups.
    pub counts: Vec<usize>,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            counts: vec![4, 16],
            fractions: vec![0.1, 1.0],
            seeds: vec![0, 1, 2],
        }
    }
}

/// Everything a command needs. Every field has a default; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Base preset the file is layered over: `desk` or `paper-scale`.
    pub preset: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Write a resumable checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
    pub data: DataConfig,
    pub pretrain: PretrainConfig,
    pub probe: ProbeProtocol,
    pub segmentation: SegConfig,
    pub eval_data: EvalDataConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("unknown preset `{0}` (expected desk or paper-scale)")]
    Preset(String),
}

impl RunConfig {
    /// Small encoder and synthetic data; runs on one CPU core.
    pub fn desk() -> Self {
        RunConfig {
            preset: "desk".into(),
            seed: 0,
            output_dir: PathBuf::from("runs"),
            checkpoint_every: 0,
            data: DataConfig::default(),
            pretrain: PretrainConfig {
                method: Method::Moco,
                encoder: EncoderSpec {
                    family: Family::MicroCnn,
                    feature_dim: 64,
                    map_stride: 8,
                    base_width: 16,
                    ..Default::default()
                },
                // blur scaled to the 32 px crop
                augment: AugmentConfig {
                    crop_size: 32,
                    blur_sigma: (0.1, 0.3),
                    ..Default::default()
                },
                contrast: ContrastConfig::default(),
                optimizer: OptimizerSpec::sgd(0.9, 1e-4),
                lr: 0.03,
                schedule: LrSchedule::Constant,
                epochs: 1000,
                batch_size: 32,
                max_steps: Some(800),
                temco_assignment: Default::default(),
            },
            probe: ProbeProtocol {
                lr: 1e-3,
                ..ProbeProtocol::linear()
            },
            segmentation: SegConfig::default(),
            eval_data: EvalDataConfig::default(),
            ablation: AblationConfig::default(),
        }
    }

    /// Settings of the full-size experiments: ResNet-50-like encoder on
    /// 512 px tiles with 224 px crops, batch 256, 65536 negatives, 200 epochs.
    pub fn paper_scale() -> Self {
        let desk = RunConfig::desk();
        RunConfig {
            preset: "paper-scale".into(),
            data: DataConfig {
                tile_size: 512,
                ..desk.data
            },
            pretrain: PretrainConfig {
                encoder: EncoderSpec {
                    family: Family::Resnet50Like,
                    feature_dim: 128,
                    map_stride: 32,
                    base_width: 64,
                    ..Default::default()
                },
                augment: AugmentConfig::default(),
                contrast: ContrastConfig {
                    queue_capacity: 65536,
                    ..Default::default()
                },
                epochs: 200,
                batch_size: 256,
                max_steps: None,
                schedule: LrSchedule::Milestones {
                    epochs: vec![120, 160],
                    gamma: 0.1,
                },
                ..desk.pretrain
            },
            probe: ProbeProtocol::linear(),
            eval_data: EvalDataConfig {
                crop: 224,
                ..desk.eval_data
            },
            ..desk
        }
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "desk" => Ok(RunConfig::desk()),
            "paper-scale" | "paper_scale" => Ok(RunConfig::paper_scale()),
            other => Err(ConfigError::Preset(other.into())),
        }
    }

    /// Parse TOML layered over the preset named by its `preset` key.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let overlay: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let preset = match overlay.get("preset") {
            None => "desk".to_string(),
            Some(toml::Value::String(s)) => s.clone(),
            Some(_) => return Err(ConfigError::Parse("`preset` must be a string".into())),
        };
        let base = RunConfig::preset(&preset)?;
        let mut merged = toml::Table::try_from(&base).map_err(|e| ConfigError::Parse(e.to_string()))?;
        merge_tables(&mut merged, overlay);
        let cfg: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// The fully resolved configuration, as persisted next to outputs.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let wrap = |e: &dyn std::fmt::Display| ConfigError::Parse(e.to_string());
        self.pretrain.validate().map_err(|e| wrap(&e))?;
        self.probe.validate().map_err(|e| wrap(&e))?;
        self.segmentation.validate().map_err(|e| wrap(&e))?;
        self.data.synthetic.field.validate().map_err(|e| wrap(&e))?;
        self.eval_data.field.validate().map_err(|e| wrap(&e))?;
        if self.data.source == DataSource::Tiles && self.data.manifest.is_none() {
            return Err(ConfigError::Parse("data.source = \"tiles\" needs data.manifest".into()));
        }
        if self.data.tile_size == 0 {
            return Err(ConfigError::Parse("data.tile_size must be positive".into()));
        }
        Ok(())
    }
}

/// Recursively overwrite `base` with `overlay`; tables merge, everything
/// else replaces.
fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        for name in PRESETS {
            let cfg = RunConfig::preset(name).unwrap();
            let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn overlay_and_typos() {
        let cfg = RunConfig::from_toml_str("seed = 7\n[pretrain.contrast]\ntemperature = 0.1\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.pretrain.contrast.temperature, 0.1);
        assert_eq!(cfg.pretrain.contrast.queue_capacity, 4096);
        assert!(RunConfig::from_toml_str("sede = 7\n").is_err());
        assert!(RunConfig::from_toml_str("[pretrain.contrast]\ntemprature = 0.1\n").is_err());
        let paper = RunConfig::from_toml_str("preset = \"paper-scale\"\n").unwrap();
        assert_eq!(paper.pretrain.batch_size, 256);
        assert!(RunConfig::from_toml_str("preset = \"huge\"\n").is_err());
    }
}
