//! Experiment configuration, read from TOML.
//!
//! ```toml
//! [dataset]
//! name = "mode"
//! [dataset.generate]
//! family = "mode"
//! instances = 3000
//! task_size = 10
//! dim = 16
//! seed = 1
//!
//! [model]
//! name = "fate"
//!
//! [train]
//! epochs = 300
//!
//! [cv]
//! folds = 5
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::{generate, GeneratorSpec};
use crate::dataset::DatasetFile;
use crate::error::{Error, Result};
use crate::feta::Aggregation;
use crate::train::TrainConfig;
use crate::types::{Comparison, Dataset};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Feta,
    Fate,
    GenLinear,
    PairwiseLinear,
    Ranknet,
    AllPositive,
    Random,
}

impl ModelName {
    pub const ALL: [ModelName; 7] = [
        ModelName::Feta,
        ModelName::Fate,
        ModelName::GenLinear,
        ModelName::PairwiseLinear,
        ModelName::Ranknet,
        ModelName::AllPositive,
        ModelName::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelName::Feta => "feta",
            ModelName::Fate => "fate",
            ModelName::GenLinear => "gen_linear",
            ModelName::PairwiseLinear => "pairwise_linear",
            ModelName::Ranknet => "ranknet",
            ModelName::AllPositive => "all_positive",
            ModelName::Random => "random",
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelName::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model '{s}'")))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    /// Label used in result records; defaults to the family or file stem.
    pub name: Option<String>,
    pub path: Option<PathBuf>,
    pub generate: Option<GeneratorSpec>,
}

impl DatasetSource {
    pub fn label(&self) -> String {
        if let Some(name) = &self.name {
            return name.clone();
        }
        if let Some(spec) = &self.generate {
            return spec.family.name().to_string();
        }
        self.path
            .as_deref()
            .and_then(Path::file_stem)
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.path, &self.generate) {
            (Some(_), None) => Ok(()),
            (None, Some(spec)) => spec.validate(),
            _ => Err(Error::Config(
                "[dataset] needs exactly one of `path` or `[dataset.generate]`".into(),
            )),
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        self.validate()?;
        match (&self.path, &self.generate) {
            (Some(path), _) => Ok(DatasetFile::load(path)?.dataset),
            (_, Some(spec)) => generate(spec),
            _ => unreachable!("validated above"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub name: ModelName,
    pub aggregation: Aggregation,
    pub embedding_dim: usize,
    pub self_in_context: bool,
    pub comparison: Comparison,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            name: ModelName::Feta,
            aggregation: Aggregation::Mean,
            embedding_dim: 16,
            self_in_context: true,
            comparison: Comparison::Gt,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub calibration_fraction: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            repeats: 1,
            seed: 0,
            calibration_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub cv: CvConfig,
}

/// Outer envelope of the tuning ranges used for the neural models.
const LR_RANGE: (f64, f64) = (1e-5, 0.1);
const L2_MAX: f64 = 0.1;
const BATCH_MAX: usize = 8192;
const LAYERS_MAX: usize = 20;
const UNITS_MAX: usize = 128;

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative dataset paths are taken relative to the config file
        if let (Some(p), Some(dir)) = (&cfg.dataset.path, path.parent()) {
            if p.is_relative() {
                cfg.dataset.path = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.validate_settings()
    }

    /// Checks the model, training and CV sections only, for callers that
    /// supply the dataset themselves.
    pub fn validate_settings(&self) -> Result<()> {
        let t = &self.train;
        t.validate().map_err(|e| Error::Config(e.to_string()))?;
        let in_range = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} outside its admissible range")))
            }
        };
        in_range((LR_RANGE.0..=LR_RANGE.1).contains(&t.lr0), "train.lr0")?;
        in_range(t.l2 <= L2_MAX, "train.l2")?;
        in_range(t.batch_size <= BATCH_MAX, "train.batch_size")?;
        in_range(t.hidden_layers <= LAYERS_MAX, "train.hidden_layers")?;
        in_range(t.units <= UNITS_MAX, "train.units")?;
        in_range(t.epochs > 0, "train.epochs")?;
        in_range(
            self.model.embedding_dim > 0 && self.model.embedding_dim <= UNITS_MAX,
            "model.embedding_dim",
        )?;
        in_range(self.cv.folds >= 2, "cv.folds")?;
        in_range(self.cv.repeats >= 1, "cv.repeats")?;
        in_range(
            self.cv.calibration_fraction > 0.0 && self.cv.calibration_fraction < 1.0,
            "cv.calibration_fraction",
        )?;
        Ok(())
    }
}
