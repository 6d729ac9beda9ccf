//! Data preparation, training and evaluation as used by the command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use attnhar_core::attention::assemble_attention_model;
use attnhar_core::data::{split, standardize, ChannelStats, SequenceDataset};
use attnhar_core::model::{build_fundamental_cnn, Model};
use attnhar_core::optim::AdamState;
use attnhar_core::synth::synth_weak;
use attnhar_core::train::{self, ClassificationMetrics, EpochRecord, TrainObserver};
use attnhar_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, DataProvenance};
use crate::config::{DatasetKind, RunConfig, Variant};
use crate::dataset_io::{load_dataset, sidecar_path};
use crate::error::{io_err, json_err, Error, Result};
use crate::history::write_history;
use crate::ucihar::{self, load_ucihar};

/// Standardized splits ready for training or evaluation.
pub struct PreparedData {
    pub train: SequenceDataset,
    pub val: Option<SequenceDataset>,
    pub test: SequenceDataset,
    pub stats: ChannelStats,
}

impl PreparedData {
    pub fn split(&self, name: &str) -> Result<&SequenceDataset> {
        match name {
            "train" => Ok(&self.train),
            "val" => self
                .val
                .as_ref()
                .ok_or_else(|| Error::Config("this dataset has no validation split".to_string())),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Resolves a synthetic dataset location: a file stem, or a directory
/// holding `synthetic.json` and `synthetic.bin`.
pub fn synthetic_stem(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("synthetic")
    } else {
        path.with_extension("")
    }
}

fn truncate(ds: SequenceDataset, subset: Option<usize>) -> Result<SequenceDataset> {
    match subset {
        Some(k) if k < ds.len() => Ok(ds.subset(&(0..k).collect::<Vec<_>>())?),
        _ => Ok(ds),
    }
}

/// Raw, unstandardized splits.
fn raw_splits(config: &RunConfig) -> Result<(SequenceDataset, Option<SequenceDataset>, SequenceDataset)> {
    match config.dataset {
        DatasetKind::Ucihar => {
            let root = config
                .data_dir
                .as_ref()
                .ok_or_else(|| Error::Config("--data-dir must point at the UCI HAR dataset root".to_string()))?;
            let train = load_ucihar(root, ucihar::Split::Train)?;
            let test = load_ucihar(root, ucihar::Split::Test)?;
            Ok((train, None, test))
        }
        DatasetKind::Synthetic => {
            let full = match &config.data_dir {
                Some(dir) => load_dataset(&synthetic_stem(dir))?.0,
                None => synth_weak(&config.synth, config.synth_seed)?,
            };
            let (train, val, test) = split(&full, config.split, config.split_seed)?;
            let val = (!val.is_empty()).then_some(val);
            Ok((train, val, test))
        }
    }
}

/// Loads or generates the data, splits it and standardizes every split with
/// training statistics (or the supplied ones).
pub fn prepare_data(config: &RunConfig, stats: Option<&ChannelStats>) -> Result<PreparedData> {
    let (train, val, test) = raw_splits(config)?;
    let train = truncate(train, config.subset)?;
    let val = val.map(|v| truncate(v, config.subset)).transpose()?;
    let test = truncate(test, config.subset)?;
    let stats = match stats {
        Some(s) => s.clone(),
        None => ChannelStats::compute(&train)?,
    };
    Ok(PreparedData {
        train: standardize(&train, &stats)?,
        val: val.map(|v| standardize(&v, &stats)).transpose()?,
        test: standardize(&test, &stats)?,
        stats,
    })
}

pub fn build_model(config: &RunConfig, data: &SequenceDataset) -> Result<Model> {
    let seed = config.train.seed;
    let base = build_fundamental_cnn(data.seq_len(), data.channels(), data.num_classes(), seed)?;
    let levels = config.variant.levels();
    if levels == 0 {
        return Ok(base);
    }
    Ok(assemble_attention_model(
        &base,
        levels,
        config.compat.into(),
        config.norm.into(),
        seed.wrapping_add(1),
    )?)
}

/// Metrics of one split plus forward-pass throughput.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    #[serde(flatten)]
    pub metrics: ClassificationMetrics,
    /// Sequences per second over forward passes only.
    pub throughput_seqs_per_s: f64,
    pub forward_seconds: f64,
}

pub fn evaluate_with_throughput(model: &Model, data: &SequenceDataset, batch_size: usize, split: &str) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Config(format!("{split} split is empty")));
    }
    // Batches are assembled first so the timer sees forward passes only.
    let idx: Vec<usize> = (0..data.len()).collect();
    let batches: Vec<Tensor> = idx
        .chunks(batch_size.max(1))
        .map(|c| data.batch(c).map(|(x, _)| x))
        .collect::<std::result::Result<_, _>>()?;
    let classes = model.spec().num_classes;
    let start = Instant::now();
    let mut predicted = Vec::with_capacity(data.len());
    for x in &batches {
        let logits = model.logits(x)?;
        predicted.extend(logits.data().chunks_exact(classes).map(|row| {
            row.iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
        }));
    }
    let forward_seconds = start.elapsed().as_secs_f64();
    let metrics = train::classification_metrics(&predicted, data.labels(), classes)?;
    Ok(EvalReport {
        split: split.to_string(),
        metrics,
        throughput_seqs_per_s: data.len() as f64 / forward_seconds.max(1e-12),
        forward_seconds,
    })
}

struct Progress {
    start: Instant,
    total: usize,
    quiet: bool,
}

impl TrainObserver for Progress {
    fn now_seconds(&mut self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn on_epoch(&mut self, r: &EpochRecord, _model: &Model, _state: &AdamState) -> attnhar_core::Result<()> {
        if !self.quiet {
            let val = r.val_acc.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            eprintln!(
                "epoch {}/{} loss {:.5} train_acc {:.4} val_acc {} ({:.1}s)",
                r.epoch, self.total, r.loss, r.train_acc, val, r.seconds
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub dataset: DatasetKind,
    pub variant: Variant,
    pub compat: String,
    pub norm: String,
    pub architecture: String,
    pub parameters: usize,
    pub epochs: usize,
    pub train_size: usize,
    pub val_size: Option<usize>,
    pub test_size: usize,
    /// Epoch of the saved checkpoint: best validation accuracy, or the last
    /// epoch without a validation split.
    pub selected_epoch: usize,
    pub best_val_acc: Option<f64>,
    pub test_accuracy: f64,
    pub final_test_accuracy: f64,
    pub selected: EvalReport,
    #[serde(rename = "final")]
    pub final_eval: EvalReport,
    pub train_seconds: f64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    fs::write(path, text).map_err(io_err(path))
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const FINAL_CHECKPOINT_FILE: &str = "checkpoint_final.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.json";

/// Trains, writes the checkpoints, history and metrics into `config.out`.
pub fn train_run(config: &RunConfig, quiet: bool) -> Result<TrainReport> {
    config.validate()?;
    let data = prepare_data(config, None)?;
    let (l, c, k) = config.expected_geometry();
    if config.data_dir.is_none() && (data.train.seq_len(), data.train.channels(), data.train.num_classes()) != (l, c, k) {
        return Err(Error::Config("dataset geometry does not match the configuration".to_string()));
    }
    let mut model = build_model(config, &data.train)?;
    let spec = model.spec().clone();
    fs::create_dir_all(&config.out).map_err(io_err(&config.out))?;

    let mut progress = Progress {
        start: Instant::now(),
        total: config.train.epochs,
        quiet,
    };
    let outcome = train::train(&mut model, &data.train, data.val.as_ref(), &config.train, None, &mut progress)?;
    let train_seconds = progress.start.elapsed().as_secs_f64();
    write_history(&config.out.join(HISTORY_FILE), &outcome.history)?;

    let provenance = DataProvenance::from_run(config, data.stats.clone());
    let final_ckpt = Checkpoint::new(
        &spec,
        model.params(),
        outcome.final_state.clone(),
        config.train.epochs,
        &config.train,
        provenance.clone(),
    );
    let selected_ckpt = Checkpoint::new(
        &spec,
        &outcome.selected.params,
        outcome.selected.adam.clone(),
        outcome.selected.epoch,
        &config.train,
        provenance,
    );
    save_checkpoint(&final_ckpt, &config.out.join(FINAL_CHECKPOINT_FILE))?;
    save_checkpoint(&selected_ckpt, &config.out.join(CHECKPOINT_FILE))?;

    let batch = config.train.batch_size;
    let final_eval = evaluate_with_throughput(&model, &data.test, batch, "test")?;
    let selected_model = Model::from_params(spec.clone(), outcome.selected.params.clone())?;
    let selected = evaluate_with_throughput(&selected_model, &data.test, batch, "test")?;
    let report = TrainReport {
        dataset: config.dataset,
        variant: config.variant,
        compat: format!("{:?}", config.compat).to_lowercase(),
        norm: format!("{:?}", config.norm).to_lowercase(),
        architecture: spec.shorthand(),
        parameters: model.param_count(),
        epochs: config.train.epochs,
        train_size: data.train.len(),
        val_size: data.val.as_ref().map(SequenceDataset::len),
        test_size: data.test.len(),
        selected_epoch: outcome.selected.epoch,
        best_val_acc: outcome.history.best_val().and_then(|r| r.val_acc),
        test_accuracy: selected.metrics.accuracy,
        final_test_accuracy: final_eval.metrics.accuracy,
        selected,
        final_eval,
        train_seconds,
    };
    write_json(&config.out.join(METRICS_FILE), &report)?;
    Ok(report)
}

/// Which parts of the run config were set explicitly and must win over the
/// values stored in a checkpoint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    pub dataset: bool,
    pub model: bool,
}

/// Loads the checkpoint named by `config.checkpoint` (or `<out>/checkpoint.json`)
/// and the data it was trained on. An explicit model choice must match the
/// stored spec.
pub fn load_for_inference(config: &RunConfig, overrides: Overrides) -> Result<(Checkpoint, Model, RunConfig, PreparedData)> {
    let path = config
        .checkpoint
        .clone()
        .unwrap_or_else(|| config.out.join(CHECKPOINT_FILE));
    let ckpt = load_checkpoint(&path)?;
    let mut run = config.clone();
    if !overrides.dataset {
        ckpt.data.apply_to(&mut run);
    }
    run.validate()?;
    let data = prepare_data(&run, Some(&ckpt.data.stats))?;
    let ds = data.split(&run.eval_split)?;
    let spec = &ckpt.model_spec;
    if ds.seq_len() != spec.input_len || ds.channels() != spec.input_channels || ds.num_classes() > spec.num_classes {
        return Err(Error::SpecMismatch(format!(
            "dataset windows [{}, {}] with {} classes do not fit a model over [{}, {}] with {} classes",
            ds.channels(),
            ds.seq_len(),
            ds.num_classes(),
            spec.input_channels,
            spec.input_len,
            spec.num_classes
        )));
    }
    let expected = if overrides.model {
        Some(run.model_spec(spec.input_len, spec.input_channels, spec.num_classes)?)
    } else {
        None
    };
    let model = ckpt.to_model(expected.as_ref())?;
    Ok((ckpt, model, run, data))
}

pub const EVAL_FILE: &str = "eval.json";

pub fn eval_run(config: &RunConfig, overrides: Overrides) -> Result<EvalReport> {
    let (_, model, run, data) = load_for_inference(config, overrides)?;
    let report = evaluate_with_throughput(&model, data.split(&run.eval_split)?, run.train.batch_size, &run.eval_split)?;
    fs::create_dir_all(&config.out).map_err(io_err(&config.out))?;
    write_json(&config.out.join(EVAL_FILE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub class_names: Vec<String>,
    pub class_counts: Vec<usize>,
    pub segment_len_min: usize,
    pub segment_len_max: usize,
    pub segment_len_mean: f64,
    pub files: Vec<String>,
}

pub const SYNTH_STEM: &str = "synthetic";

pub fn synth_run(config: &RunConfig) -> Result<SynthSummary> {
    config.synth.validate()?;
    config.validate()?;
    let ds = synth_weak(&config.synth, config.synth_seed)?;
    let stem = config.out.join(SYNTH_STEM);
    crate::dataset_io::save_dataset(&stem, &ds, Some(config.synth_seed), Some(&config.synth))?;
    let lens: Vec<usize> = ds.segments().unwrap_or(&[]).iter().flatten().map(|s| s.len()).collect();
    let summary = SynthSummary {
        n: ds.len(),
        seed: config.synth_seed,
        class_names: ds.meta().class_names.clone(),
        class_counts: ds.class_counts(),
        segment_len_min: lens.iter().copied().min().unwrap_or(0),
        segment_len_max: lens.iter().copied().max().unwrap_or(0),
        segment_len_mean: lens.iter().sum::<usize>() as f64 / lens.len().max(1) as f64,
        files: vec![
            crate::dataset_io::bin_path(&stem).display().to_string(),
            sidecar_path(&stem).display().to_string(),
        ],
    };
    write_json(&config.out.join("synth_summary.json"), &summary)?;
    Ok(summary)
}
