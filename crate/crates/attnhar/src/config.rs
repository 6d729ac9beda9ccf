//! Run configuration shared by every subcommand. Values come from defaults,
//! then an optional JSON file, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use attnhar_core::gradcheck::GradcheckOptions;
use attnhar_core::model::ModelSpec;
use attnhar_core::synth::SynthConfig;
use attnhar_core::train::TrainConfig;
use attnhar_core::{CompatMode, NormMode};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, Error, Result};
use crate::ucihar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Ucihar,
    Synthetic,
}

/// Number of attention levels: `none` is the fundamental CNN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    None,
    Att,
    Att2,
    Att3,
}

impl Variant {
    pub fn levels(self) -> usize {
        match self {
            Variant::None => 0,
            Variant::Att => 1,
            Variant::Att2 => 2,
            Variant::Att3 => 3,
        }
    }

    pub fn from_levels(levels: usize) -> Option<Self> {
        [Variant::None, Variant::Att, Variant::Att2, Variant::Att3].get(levels).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Compat {
    Dot,
    Pc,
}

impl From<Compat> for CompatMode {
    fn from(c: Compat) -> Self {
        match c {
            Compat::Dot => CompatMode::Dot,
            Compat::Pc => CompatMode::Pc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[serde(alias = "softmax")]
    Sm,
    Tanh,
}

impl From<Norm> for NormMode {
    fn from(n: Norm) -> Self {
        match n {
            Norm::Sm => NormMode::Softmax,
            Norm::Tanh => NormMode::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocateConfig {
    /// Indices into the evaluated split; all sequences when absent.
    pub sequences: Option<Vec<usize>>,
    /// Per-sequence curve files are written for at most this many sequences.
    pub emit: usize,
}

impl Default for LocateConfig {
    fn default() -> Self {
        Self {
            sequences: None,
            emit: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    /// UCI HAR root, or a synthetic dataset directory or file stem.
    pub data_dir: Option<PathBuf>,
    pub synth: SynthConfig,
    pub synth_seed: u64,
    pub split: [f64; 3],
    pub split_seed: u64,
    /// Keep only the first `subset` windows of every split.
    pub subset: Option<usize>,
    pub variant: Variant,
    pub compat: Compat,
    pub norm: Norm,
    pub train: TrainConfig,
    pub out: PathBuf,
    /// Density window width in feature positions.
    pub w: usize,
    pub checkpoint: Option<PathBuf>,
    /// Split used by `eval` and `locate`.
    pub eval_split: String,
    pub locate: LocateConfig,
    pub gradcheck: GradcheckOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Synthetic,
            data_dir: None,
            synth: SynthConfig::default(),
            synth_seed: 7,
            split: [0.7, 0.1, 0.2],
            split_seed: 7,
            subset: None,
            variant: Variant::None,
            compat: Compat::Pc,
            norm: Norm::Tanh,
            train: TrainConfig::default(),
            out: PathBuf::from("out"),
            w: 128,
            checkpoint: None,
            eval_split: "test".to_string(),
            locate: LocateConfig::default(),
            gradcheck: GradcheckOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(json_err(path))
    }

    pub fn validate(&self) -> Result<()> {
        if self.split.iter().any(|f| !f.is_finite() || *f < 0.0) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions {:?} must be non-negative and sum to 1",
                self.split
            )));
        }
        if self.w == 0 || self.w % 2 != 0 {
            return Err(Error::Config(format!("density window w = {} must be positive and even", self.w)));
        }
        if !["train", "val", "test"].contains(&self.eval_split.as_str()) {
            return Err(Error::Config(format!("eval split {:?} is not one of train, val, test", self.eval_split)));
        }
        if self.subset == Some(0) {
            return Err(Error::Config("subset must be at least 1".to_string()));
        }
        self.train.validate()?;
        if self.dataset == DatasetKind::Synthetic && self.data_dir.is_none() {
            self.synth.validate()?;
        }
        Ok(())
    }

    /// Model spec for the configured dataset geometry and variant.
    pub fn model_spec(&self, input_len: usize, channels: usize, classes: usize) -> Result<ModelSpec> {
        let spec = ModelSpec::standard(input_len, channels, classes)?;
        Ok(spec.with_attention(self.variant.levels(), self.compat.into(), self.norm.into()))
    }

    /// Window geometry `(L, C, classes)` implied by the dataset kind.
    pub fn expected_geometry(&self) -> (usize, usize, usize) {
        match self.dataset {
            DatasetKind::Ucihar => (ucihar::WINDOW_LEN, ucihar::SIGNALS.len(), ucihar::CLASS_NAMES.len()),
            DatasetKind::Synthetic => (self.synth.seq_len, self.synth.channels, self.synth.num_classes()),
        }
    }
}
