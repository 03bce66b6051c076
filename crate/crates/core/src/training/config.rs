use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datakit::{JitterConfig, SynthConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::optim::OptimizerConfig;
use crate::supervision::{LossWeights, SelectionSchedule};

/// Training protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Sparse keypoint supervision only.
    Baseline,
    /// Student trained with pseudo-labels from a fixed teacher checkpoint.
    St,
    /// Two networks teaching each other online.
    Mt,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "st" => Ok(Variant::St),
            "mt" => Ok(Variant::Mt),
            _ => Err(Error::Config(format!(
                "unknown variant '{s}' (expected baseline, st or mt)"
            ))),
        }
    }
}

/// Procedurally generated train/validation splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticData {
    pub train_seed: u64,
    pub val_seed: u64,
    pub train_pairs: usize,
    pub val_pairs: usize,
    #[serde(flatten)]
    pub generator: SynthConfig,
}

impl Default for SyntheticData {
    fn default() -> Self {
        Self {
            train_seed: 1,
            val_seed: 2,
            train_pairs: 200,
            val_pairs: 50,
            generator: SynthConfig::default(),
        }
    }
}

/// Data sources: either two manifests or a synthetic generator.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub synthetic: Option<SyntheticData>,
}

fn d_image_size() -> usize {
    256
}
fn d_dilation() -> usize {
    7
}
fn d_epochs() -> usize {
    30
}
fn d_batch() -> usize {
    8
}
fn d_alpha() -> f64 {
    0.1
}

/// Everything needed to reproduce a training run. Only `seed` is mandatory in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "variant_default")]
    pub variant: Variant,
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    /// Side length images are resized to when loaded from a manifest.
    #[serde(default = "d_image_size")]
    pub image_size: usize,
    #[serde(default)]
    pub model: ModelConfig,
    /// Side of the square window used to dilate the label mask.
    #[serde(default = "d_dilation")]
    pub dilation: usize,
    #[serde(default)]
    pub selection: SelectionSchedule,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    /// Photometric augmentation of training pairs; off by default.
    #[serde(default = "JitterConfig::none")]
    pub augment: JitterConfig,
    /// Initialization seeds of the two mutual teachers; defaults to `(seed, seed + 1)`.
    #[serde(default)]
    pub mt_init_seeds: Option<(u64, u64)>,
    /// Teacher checkpoint for the single offline teacher protocol.
    #[serde(default)]
    pub teacher: Option<PathBuf>,
    /// α of the image-basis PCK used for checkpoint selection.
    #[serde(default = "d_alpha")]
    pub val_alpha: f64,
}

fn variant_default() -> Variant {
    Variant::Baseline
}

impl TrainConfig {
    /// Defaults for every field with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            variant: Variant::Baseline,
            seed,
            data: DataConfig::default(),
            image_size: d_image_size(),
            model: ModelConfig::default(),
            dilation: d_dilation(),
            selection: SelectionSchedule::default(),
            loss: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            epochs: d_epochs(),
            batch_size: d_batch(),
            augment: JitterConfig::none(),
            mt_init_seeds: None,
            teacher: None,
            val_alpha: d_alpha(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config; relative data paths resolve against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut cfg.data.train_manifest);
        fix(&mut cfg.data.val_manifest);
        fix(&mut cfg.teacher);
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn mt_seeds(&self) -> (u64, u64) {
        self.mt_init_seeds
            .unwrap_or((self.seed, self.seed.wrapping_add(1)))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        self.model.validate().map_err(cfg_err)?;
        self.selection.validate().map_err(cfg_err)?;
        self.loss.validate().map_err(cfg_err)?;
        self.optimizer.validate().map_err(cfg_err)?;
        if self.dilation.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "dilation must be odd, got {}",
                self.dilation
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.image_size == 0 {
            return Err(Error::Config("image_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.val_alpha) {
            return Err(Error::Config("val_alpha must lie in [0, 1]".into()));
        }
        if let (Some((a, b)), Variant::Mt) = (self.mt_init_seeds, self.variant) {
            if a == b {
                return Err(Error::Config(
                    "mutual teachers need distinct initialization seeds".into(),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory() {
        assert!(TrainConfig::from_toml_str("epochs = 3").is_err());
        let c = TrainConfig::from_toml_str("seed = 4").unwrap();
        assert_eq!(c, TrainConfig::with_seed(4));
    }

    #[test]
    fn toml_round_trip() {
        let mut c = TrainConfig::with_seed(9);
        c.variant = Variant::Mt;
        c.data.synthetic = Some(SyntheticData::default());
        c.mt_init_seeds = Some((3, 8));
        c.model.soft_argmax.tau = 0.1;
        let text = c.to_toml_string().unwrap();
        assert_eq!(TrainConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainConfig::from_toml_str("seed = 1\ndilation = 4").is_err());
        assert!(TrainConfig::from_toml_str("seed = 1\nbogus = 4").is_err());
        assert!(TrainConfig::from_toml_str("seed = 1\n[loss]\nlambda = -1.0").is_err());
        assert!(
            TrainConfig::from_toml_str("seed = 1\nvariant = \"mt\"\nmt_init_seeds = [2, 2]")
                .is_err()
        );
    }
}
