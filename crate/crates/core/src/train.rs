//! Mini-batch training with Adam and classification metrics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SequenceDataset;
use crate::error::{invalid, Error, Result};
use crate::model::{Model, Param};
use crate::optim::{adam_step, AdamConfig, AdamState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 100,
            batch_size: 50,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return invalid("TrainConfig", "epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return invalid("TrainConfig", "batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid("TrainConfig", "learning_rate must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Visiting order for one epoch. Each epoch reseeds from the master seed so
/// an interrupted run can resume at any epoch with the same order.
pub fn epoch_order(n: usize, seed: u64, epoch: usize, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(epoch as u64);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
    }
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Sample-weighted mean of the batch losses.
    pub loss: f64,
    /// Accuracy of the predictions made while training on each batch.
    pub train_acc: f64,
}

fn check_compatible(model: &Model, dataset: &SequenceDataset) -> Result<()> {
    let spec = model.spec();
    if dataset.channels() != spec.input_channels || dataset.seq_len() != spec.input_len {
        return invalid(
            "train",
            format!(
                "dataset windows are [{}, {}], model expects [{}, {}]",
                dataset.channels(),
                dataset.seq_len(),
                spec.input_channels,
                spec.input_len
            ),
        );
    }
    if dataset.num_classes() > spec.num_classes {
        return invalid(
            "train",
            format!("dataset has {} classes, model {}", dataset.num_classes(), spec.num_classes),
        );
    }
    Ok(())
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// One pass over `dataset` in the given order. The last partial batch is
/// kept.
pub fn run_epoch(
    model: &mut Model,
    state: &mut AdamState,
    dataset: &SequenceDataset,
    order: &[usize],
    config: &TrainConfig,
) -> Result<EpochStats> {
    check_compatible(model, dataset)?;
    if order.is_empty() {
        return invalid("run_epoch", "empty training set");
    }
    let adam = config.adam();
    let classes = model.spec().num_classes;
    let mut loss_total = 0.0;
    let mut correct = 0usize;
    for chunk in order.chunks(config.batch_size) {
        let (x, labels) = dataset.batch(chunk)?;
        let (loss, logits) = model.loss_and_grads(&x, &labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { op: "training loss" });
        }
        loss_total += loss * chunk.len() as f64;
        correct += logits
            .data()
            .chunks_exact(classes)
            .zip(&labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
        adam_step(model.params_mut(), state, &adam)?;
    }
    let n = order.len() as f64;
    Ok(EpochStats {
        loss: loss_total / n,
        train_acc: correct as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Epoch with the highest validation accuracy, earliest on ties.
    pub fn best_val(&self) -> Option<&EpochRecord> {
        self.epochs
            .iter()
            .filter(|r| r.val_acc.is_some())
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.val_acc >= r.val_acc => Some(b),
                _ => Some(r),
            })
    }
}

/// Parameters and optimizer state at the selected epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub epoch: usize,
    pub params: Vec<Param>,
    pub adam: AdamState,
}

/// Hooks for the caller: a clock (the core has none) and a per-epoch callback.
pub trait TrainObserver {
    fn now_seconds(&mut self) -> f64 {
        0.0
    }

    fn on_epoch(&mut self, _record: &EpochRecord, _model: &Model, _state: &AdamState) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct Silent;

impl TrainObserver for Silent {}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    pub final_state: AdamState,
    /// Best-validation snapshot, or the final epoch without a validation set.
    pub selected: Snapshot,
}

/// Trains `model` in place for `config.epochs` epochs starting after
/// `start_epoch` completed ones, continuing from `state`.
pub fn train(
    model: &mut Model,
    train_set: &SequenceDataset,
    val_set: Option<&SequenceDataset>,
    config: &TrainConfig,
    state: Option<AdamState>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_compatible(model, train_set)?;
    if let Some(v) = val_set {
        check_compatible(model, v)?;
    }
    let val_set = val_set.filter(|v| !v.is_empty());
    let mut state = state.unwrap_or_else(|| AdamState::new(model.params()));
    state.check(model.params())?;
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Snapshot)> = None;
    for epoch in 1..=config.epochs {
        let t0 = observer.now_seconds();
        let order = epoch_order(train_set.len(), config.seed, epoch, config.shuffle);
        let stats = run_epoch(model, &mut state, train_set, &order, config)?;
        let val_acc = match val_set {
            Some(v) => Some(evaluate(model, v, config.batch_size)?.accuracy),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            loss: stats.loss,
            train_acc: stats.train_acc,
            val_acc,
            seconds: observer.now_seconds() - t0,
        };
        observer.on_epoch(&record, model, &state)?;
        if let Some(acc) = val_acc {
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((
                    acc,
                    Snapshot {
                        epoch,
                        params: model.params().to_vec(),
                        adam: state.clone(),
                    },
                ));
            }
        }
        history.epochs.push(record);
    }
    let selected = match best {
        Some((_, snap)) => snap,
        None => Snapshot {
            epoch: config.epochs,
            params: model.params().to_vec(),
            adam: state.clone(),
        },
    };
    Ok(TrainOutcome {
        history,
        final_state: state,
        selected,
    })
}

/// Class predictions with frozen weights.
pub fn predict(model: &Model, dataset: &SequenceDataset, batch_size: usize) -> Result<Vec<usize>> {
    check_compatible(model, dataset)?;
    let classes = model.spec().num_classes;
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut out = Vec::with_capacity(dataset.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = dataset.batch(chunk)?;
        let logits = model.logits(&x)?;
        out.extend(logits.data().chunks_exact(classes).map(argmax));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    /// `None` for classes absent from the dataset.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub count: usize,
}

pub fn classification_metrics(predicted: &[usize], labels: &[usize], classes: usize) -> Result<ClassificationMetrics> {
    if labels.is_empty() {
        return invalid("evaluate", "empty dataset");
    }
    if predicted.len() != labels.len() {
        return invalid("evaluate", "prediction and label counts differ");
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &l) in predicted.iter().zip(labels) {
        if p >= classes || l >= classes {
            return Err(Error::LabelOutOfRange {
                label: p.max(l),
                classes,
            });
        }
        confusion[l][p] += 1;
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| row[c] as f64 / total as f64)
        })
        .collect();
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / labels.len() as f64,
        per_class_accuracy,
        confusion,
        count: labels.len(),
    })
}

pub fn evaluate(model: &Model, dataset: &SequenceDataset, batch_size: usize) -> Result<ClassificationMetrics> {
    if dataset.is_empty() {
        return invalid("evaluate", "empty dataset");
    }
    let predicted = predict(model, dataset, batch_size)?;
    classification_metrics(&predicted, dataset.labels(), model.spec().num_classes)
}
