//! Pipeline configuration. Values resolve as flags, then the TOML file, then
//! built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use deepbof::evalharness::DEFAULT_SWEEP;
use deepbof::mlpclassify::TrainConfig;
use serde::{Deserialize, Serialize};

/// A single codebook size or a list of them.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Sizes {
    One(usize),
    Many(Vec<usize>),
}

impl Sizes {
    fn into_vec(self) -> Vec<usize> {
        match self {
            Sizes::One(k) => vec![k],
            Sizes::Many(v) => v,
        }
    }
}

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub manifest: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub codebook: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub codebook_size: Option<Sizes>,
    pub seed: Option<u64>,
    pub folds: Option<usize>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub finetune_epochs: Option<usize>,
    pub extractor: Option<String>,
    pub feature_map: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Command-line values; `None` falls through to the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub manifest: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub codebook: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub codebook_size: Vec<usize>,
    pub seed: Option<u64>,
    pub folds: Option<usize>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub finetune_epochs: Option<usize>,
    pub extractor: Option<String>,
    pub feature_map: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub codebook: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub codebook_size: Vec<usize>,
    pub folds: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub finetune_epochs: usize,
    pub extractor: String,
    pub feature_map: String,
    /// Whether `codebook_size` came from the defaults.
    #[serde(skip)]
    pub default_sizes: bool,
}

impl PipelineConfig {
    pub fn resolve(flags: Overrides, config: Option<&Path>) -> Result<Self> {
        let file = match config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let train = TrainConfig::default();
        let file_sizes = file.codebook_size.map(Sizes::into_vec);
        let default_sizes = flags.codebook_size.is_empty() && file_sizes.is_none();
        let codebook_size = if !flags.codebook_size.is_empty() {
            flags.codebook_size
        } else {
            file_sizes.unwrap_or_else(|| DEFAULT_SWEEP.to_vec())
        };
        let cfg = Self {
            manifest: flags.manifest.or(file.manifest),
            features: flags.features.or(file.features),
            out: flags.out.or(file.out),
            codebook: flags.codebook.or(file.codebook),
            model: flags.model.or(file.model),
            seed: flags.seed.or(file.seed),
            codebook_size,
            folds: flags.folds.or(file.folds).unwrap_or(10),
            lr: flags.lr.or(file.lr).unwrap_or(train.learning_rate),
            epochs: flags.epochs.or(file.epochs).unwrap_or(train.epochs),
            batch_size: flags.batch_size.or(file.batch_size).unwrap_or(train.batch_size),
            finetune_epochs: flags.finetune_epochs.or(file.finetune_epochs).unwrap_or(0),
            extractor: flags.extractor.or(file.extractor).unwrap_or_else(|| "features".into()),
            feature_map: flags.feature_map.or(file.feature_map).unwrap_or_default(),
            default_sizes,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.codebook_size.is_empty() || self.codebook_size.contains(&0) {
            bail!("codebook sizes must be positive, got {:?}", self.codebook_size);
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            bail!("learning rate must be positive, got {}", self.lr);
        }
        if self.epochs == 0 || self.batch_size == 0 {
            bail!("epochs and batch size must be positive");
        }
        Ok(())
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.context("no seed given: pass --seed or set `seed` in the config file")
    }

    pub fn manifest(&self) -> Result<&Path> {
        self.manifest.as_deref().context("no manifest given: pass --manifest")
    }

    pub fn features(&self) -> Result<&Path> {
        self.features.as_deref().context("no feature directory given: pass --features")
    }

    pub fn out(&self) -> Result<&Path> {
        self.out.as_deref().context("no output directory given: pass --out")
    }

    /// The one codebook size used by `codebook` and `train`. Without an
    /// explicit value this is the first size of the default sweep.
    pub fn single_size(&self) -> Result<usize> {
        match self.codebook_size.as_slice() {
            [k] => Ok(*k),
            [k, ..] if self.default_sizes => Ok(*k),
            sizes => bail!("this command takes one codebook size, got {sizes:?}"),
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { learning_rate: self.lr, epochs: self.epochs, batch_size: self.batch_size, seed }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
