//! Experiment configuration (one JSON document, every key optional).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bo::BoConfig;
use crate::ecg::dataset::SplitFractions;
use crate::ecg::synth::SynthConfig;
use crate::ecg::ClassSet;
use crate::error::{config_err, Error, Result};
use crate::model::ArchConfig;
use crate::nn::TrainConfig;
use crate::pso::PsoConfig;
use crate::space::{HyperParams, SearchSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WfdbRecordConfig {
    pub name: String,
    /// Format-212 signal file.
    pub signal: PathBuf,
    /// Text annotations, one `sampleIndex symbol` per line.
    pub annotations: PathBuf,
    #[serde(default = "two")]
    pub channels: usize,
    /// Per-channel sample count; inferred from the file size when absent.
    #[serde(default)]
    pub samples_per_channel: Option<usize>,
    #[serde(default = "mitbih_rate")]
    pub sampling_rate: f64,
    #[serde(default = "mitbih_gain")]
    pub gain: f64,
}

fn two() -> usize {
    2
}
fn mitbih_rate() -> f64 {
    360.0
}
fn mitbih_gain() -> f64 {
    200.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Pre-segmented beats (`label,v0,...`).
    Csv { path: PathBuf },
    Wfdb212 { records: Vec<WfdbRecordConfig> },
    /// Generated in memory.
    Synthetic(SynthConfig),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SynthConfig::default())
    }
}

/// What the tuners minimise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessMetric {
    /// `1 - validation accuracy`.
    #[default]
    ValAccuracy,
    /// Best validation loss.
    ValLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub window_length: usize,
    pub classes: ClassSet,
    pub split: SplitFractions,
    /// Cap on the number of beats kept, drawn evenly across classes.
    pub max_segments: Option<usize>,
    /// Master seed: split, training, and both tuners.
    pub seed: u64,
    pub train: TrainConfig,
    pub arch: ArchConfig,
    pub space: SearchSpace,
    /// Untuned configuration; also BO's first trial.
    pub baseline: HyperParams,
    pub bo: BoConfig,
    pub pso: PsoConfig,
    pub fitness: FitnessMetric,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            window_length: 250,
            classes: ClassSet::default(),
            split: SplitFractions::default(),
            max_segments: None,
            seed: 0,
            train: TrainConfig::default(),
            arch: ArchConfig::default(),
            space: SearchSpace::default(),
            baseline: HyperParams::LEVEL_ONE_DEFAULT,
            bo: BoConfig::default(),
            pso: PsoConfig::default(),
            fitness: FitnessMetric::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Reads a config; relative paths inside it are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| config_err!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.data {
            DataSource::Csv { path } => fix(path),
            DataSource::Wfdb212 { records } => {
                for r in records {
                    fix(&mut r.signal);
                    fix(&mut r.annotations);
                }
            }
            DataSource::Synthetic(_) => {}
        }
        fix(&mut self.out_dir);
    }

    /// Seeds of the sub-configs follow the master seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.bo.seed = seed;
        self.pso.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0 {
            return Err(config_err!("window_length must be positive"));
        }
        self.split.validate()?;
        self.space.validate()?;
        self.baseline.validate(&self.space)?;
        self.bo.validate()?;
        self.pso.validate()?;
        if self.train.batch_size == 0 || self.train.max_epochs == 0 {
            return Err(config_err!("train.batch_size and train.max_epochs must be positive"));
        }
        if self.max_segments == Some(0) {
            return Err(config_err!("max_segments must be positive"));
        }
        let must_exist = |p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(config_err!("{} does not exist", p.display()))
            }
        };
        match &self.data {
            DataSource::Csv { path } => must_exist(path)?,
            DataSource::Wfdb212 { records } => {
                if records.is_empty() {
                    return Err(config_err!("wfdb212 source lists no records"));
                }
                for r in records {
                    must_exist(&r.signal)?;
                    must_exist(&r.annotations)?;
                }
            }
            DataSource::Synthetic(_) => {}
        }
        Ok(())
    }
}
