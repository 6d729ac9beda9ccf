//! Versioned JSON checkpoints.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use attnhar_core::data::ChannelStats;
use attnhar_core::model::{Model, ModelSpec, Param};
use attnhar_core::optim::AdamState;
use attnhar_core::synth::SynthConfig;
use attnhar_core::train::TrainConfig;
use attnhar_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetKind, RunConfig};
use crate::error::{io_err, json_err, Error, Result};

pub const CHECKPOINT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// What the model was trained on, enough to rebuild the same splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataProvenance {
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    /// Generator settings when the synthetic set was built in memory.
    pub synth: Option<SynthConfig>,
    pub synth_seed: u64,
    pub split: [f64; 3],
    pub split_seed: u64,
    pub subset: Option<usize>,
    /// Per-channel statistics of the training split used to standardize.
    pub stats: ChannelStats,
}

impl DataProvenance {
    pub fn from_run(run: &RunConfig, stats: ChannelStats) -> Self {
        Self {
            dataset: run.dataset,
            data_dir: run.data_dir.clone(),
            synth: (run.dataset == DatasetKind::Synthetic && run.data_dir.is_none()).then(|| run.synth.clone()),
            synth_seed: run.synth_seed,
            split: run.split,
            split_seed: run.split_seed,
            subset: run.subset,
            stats,
        }
    }

    /// Copies the data selection into `run`, keeping everything else.
    pub fn apply_to(&self, run: &mut RunConfig) {
        run.dataset = self.dataset;
        run.data_dir = self.data_dir.clone();
        if let Some(s) = &self.synth {
            run.synth = s.clone();
        }
        run.synth_seed = self.synth_seed;
        run.split = self.split;
        run.split_seed = self.split_seed;
        run.subset = self.subset;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u64,
    pub model_spec: ModelSpec,
    pub params: Vec<StoredParam>,
    pub adam_state: AdamState,
    /// Completed epochs at the time of the snapshot.
    pub epoch: usize,
    pub seed: u64,
    pub train_config: TrainConfig,
    pub data: DataProvenance,
}

impl Checkpoint {
    pub fn new(
        spec: &ModelSpec,
        params: &[Param],
        adam_state: AdamState,
        epoch: usize,
        train_config: &TrainConfig,
        data: DataProvenance,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            model_spec: spec.clone(),
            params: params
                .iter()
                .map(|p| StoredParam {
                    name: p.name.clone(),
                    shape: p.tensor.shape().to_vec(),
                    data: p.tensor.data().to_vec(),
                })
                .collect(),
            adam_state,
            epoch,
            seed: train_config.seed,
            train_config: train_config.clone(),
            data,
        }
    }

    /// Rebuilds the model, optionally insisting on a particular spec.
    pub fn to_model(&self, expected: Option<&ModelSpec>) -> Result<Model> {
        if let Some(spec) = expected {
            if spec != &self.model_spec {
                return Err(Error::SpecMismatch(format!(
                    "checkpoint holds {} with {} attention levels over [{}, {}], expected {} with {} levels over [{}, {}]",
                    self.model_spec.shorthand(),
                    self.model_spec.attention_levels,
                    self.model_spec.input_channels,
                    self.model_spec.input_len,
                    spec.shorthand(),
                    spec.attention_levels,
                    spec.input_channels,
                    spec.input_len
                )));
            }
        }
        let params = self
            .params
            .iter()
            .map(|p| {
                Ok(Param {
                    name: p.name.clone(),
                    tensor: Tensor::new(&p.shape, p.data.clone())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = Model::from_params(self.model_spec.clone(), params)
            .map_err(|e| Error::SpecMismatch(e.to_string()))?;
        self.adam_state.check(model.params())?;
        Ok(model)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, ckpt).map_err(json_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    // Check the version before the full decode so old or future files give
    // a version error rather than a field error.
    #[derive(Deserialize)]
    struct Header {
        version: u64,
    }
    let header: Header = serde_json::from_str(&text).map_err(json_err(path))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: header.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    serde_json::from_str(&text).map_err(json_err(path))
}
