use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::{AcquisitionFunction, RegionScoringConfig};
use crate::data::{generate_synthetic, load_dataset, Dataset, SyntheticConfig};
use crate::error::{Error, Result};
use crate::segmenter::{NetworkConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    /// Whole images are annotated.
    FullImage,
    /// Fixed-size windows are annotated.
    Region,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::FullImage => "FULL_IMAGE",
            Strategy::Region => "REGION",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "FULL_IMAGE" => Ok(Strategy::FullImage),
            "REGION" => Ok(Strategy::Region),
            _ => Err(Error::invalid(format!("unknown strategy `{s}`"))),
        }
    }
}

/// Where the images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SyntheticConfig),
    Manifest {
        path: PathBuf,
        /// Optional `[height, width]` to resample every record to.
        #[serde(default)]
        resize: Option<(usize, usize)>,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticConfig::default())
    }
}

impl DatasetSource {
    /// Loads or generates the dataset. Relative manifest paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<Dataset> {
        match self {
            DatasetSource::Synthetic(cfg) => generate_synthetic(cfg),
            DatasetSource::Manifest { path, resize } => {
                let ds = load_dataset(&base.join(path))?;
                match resize {
                    Some((h, w)) => ds.resized(*h, *w),
                    None => Ok(ds),
                }
            }
        }
    }
}

/// One active-learning experiment: a strategy run once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub strategy: Strategy,
    pub acq_fn: AcquisitionFunction,
    /// Images fully annotated before the first query.
    pub initial_labeled: usize,
    /// Images annotated per step by the full-image strategy.
    pub images_per_step: usize,
    pub region: RegionScoringConfig,
    /// MC-dropout passes for acquisition, pseudo-labels and evaluation.
    pub mc_passes: usize,
    /// Independently initialized models trained per retrain; the best on validation wins.
    pub restarts: usize,
    pub query_steps: usize,
    pub seeds: Vec<u64>,
    pub dataset: DatasetSource,
    pub output_dir: PathBuf,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    /// Fraction of labeled images held out for restart selection.
    pub validation_fraction: f64,
    pub min_validation: usize,
    pub calibration_bins: usize,
    pub histogram_bins: usize,
    /// Also train on the whole training split for the pixels-to-target summary.
    pub baseline: bool,
    /// Write measured wall-clock seconds into results.csv; when off the column is 0
    /// so reruns produce identical files.
    pub record_wallclock: bool,
    pub save_checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            strategy: Strategy::Region,
            acq_fn: AcquisitionFunction::Entropy,
            initial_labeled: 10,
            images_per_step: 5,
            region: RegionScoringConfig::default(),
            mc_passes: 20,
            restarts: 4,
            query_steps: 5,
            seeds: vec![0],
            dataset: DatasetSource::default(),
            output_dir: PathBuf::from("runs/experiment"),
            network: NetworkConfig::default(),
            training: TrainConfig::default(),
            validation_fraction: 0.2,
            min_validation: 2,
            calibration_bins: 10,
            histogram_bins: 10,
            baseline: true,
            record_wallclock: false,
            save_checkpoints: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        // manifest paths are relative to the config file
        if let DatasetSource::Manifest { path: p, .. } = &mut cfg.dataset {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that does not depend on the dataset.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.initial_labeled == 0 || self.images_per_step == 0 {
            return bad("initial_labeled and images_per_step must be positive");
        }
        if self.mc_passes == 0 || self.restarts == 0 {
            return bad("mc_passes and restarts must be positive");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if self.calibration_bins == 0 || self.histogram_bins == 0 {
            return bad("bin counts must be positive");
        }
        self.network.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.training.loss.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let DatasetSource::Synthetic(s) = &self.dataset {
            s.validate()?;
            s.check_divisible(self.network.size_divisor())?;
        }
        Ok(())
    }

    /// Checks the config against a loaded dataset.
    pub fn validate_for(&self, dataset: &Dataset) -> Result<()> {
        let train = dataset.train();
        if self.initial_labeled > train.len() {
            return Err(Error::Config(format!(
                "initial_labeled {} exceeds the {} training images",
                self.initial_labeled,
                train.len()
            )));
        }
        if dataset.test().is_empty() {
            return Err(Error::Config("dataset has no test images".into()));
        }
        if dataset.classes != self.network.classes {
            return Err(Error::Config(format!(
                "dataset has {} classes, network expects {}",
                dataset.classes, self.network.classes
            )));
        }
        if let Some(c) = dataset.channels()? {
            if c != self.network.input_channels {
                return Err(Error::Config(format!(
                    "images have {c} channels, network expects {}",
                    self.network.input_channels
                )));
            }
        }
        let first = &dataset.records[0];
        let (h, w) = (first.image.height(), first.image.width());
        if let Some(r) = dataset
            .records
            .iter()
            .find(|r| r.image.height() != h || r.image.width() != w)
        {
            return Err(Error::Config(format!(
                "record `{}` is {}x{}, expected {h}x{w}; set a resize",
                r.id,
                r.image.height(),
                r.image.width()
            )));
        }
        let div = self.network.size_divisor();
        if h % div != 0 || w % div != 0 {
            return Err(Error::Config(format!("image size {h}x{w} is not divisible by {div}")));
        }
        if self.strategy == Strategy::Region {
            self.region
                .validate(h, w)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}
