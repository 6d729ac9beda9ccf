//! Fixed-length multi-channel sequence datasets, standardization and splits.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::localization::Interval;
use crate::tensor::Tensor;

/// Names and sampling rate shared by every window of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub class_names: Vec<String>,
    pub channel_names: Vec<String>,
    pub sample_rate_hz: f64,
}

/// `N` windows of shape `[C, L]` stored contiguously as `[N, C, L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    windows: Vec<f64>,
    channels: usize,
    seq_len: usize,
    labels: Vec<usize>,
    segments: Option<Vec<Vec<Interval>>>,
    meta: DatasetMeta,
}

impl SequenceDataset {
    pub fn new(
        windows: Vec<f64>,
        channels: usize,
        seq_len: usize,
        labels: Vec<usize>,
        segments: Option<Vec<Vec<Interval>>>,
        meta: DatasetMeta,
    ) -> Result<Self> {
        if channels == 0 || seq_len == 0 {
            return invalid("SequenceDataset", "channels and sequence length must be positive");
        }
        if meta.channel_names.len() != channels {
            return shape_err("SequenceDataset", "channel names", channels, meta.channel_names.len());
        }
        let n = labels.len();
        if windows.len() != n * channels * seq_len {
            return shape_err("SequenceDataset", "window data", n * channels * seq_len, windows.len());
        }
        let classes = meta.class_names.len();
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        if let Some(segs) = &segments {
            if segs.len() != n {
                return shape_err("SequenceDataset", "segment lists", n, segs.len());
            }
            if segs.iter().flatten().any(|s| s.is_empty() || s.end > seq_len) {
                return invalid("SequenceDataset", format!("segments must lie within [0, {seq_len})"));
            }
        }
        if windows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "SequenceDataset" });
        }
        Ok(Self {
            windows,
            channels,
            seq_len,
            labels,
            segments,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn num_classes(&self) -> usize {
        self.meta.class_names.len()
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn window_size(&self) -> usize {
        self.channels * self.seq_len
    }

    /// Channel-major samples of window `i`.
    pub fn window(&self, i: usize) -> &[f64] {
        let w = self.window_size();
        &self.windows[i * w..(i + 1) * w]
    }

    pub fn windows(&self) -> &[f64] {
        &self.windows
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn segments(&self) -> Option<&[Vec<Interval>]> {
        self.segments.as_deref()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Stacks the selected windows into `[B, C, L]`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        if indices.is_empty() {
            return invalid("SequenceDataset::batch", "empty batch");
        }
        let mut data = Vec::with_capacity(indices.len() * self.window_size());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return shape_err("SequenceDataset::batch", "index", self.len(), i);
            }
            data.extend_from_slice(self.window(i));
            labels.push(self.labels[i]);
        }
        let t = Tensor::new(&[indices.len(), self.channels, self.seq_len], data)?;
        Ok((t, labels))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut windows = Vec::with_capacity(indices.len() * self.window_size());
        let mut labels = Vec::with_capacity(indices.len());
        let mut segments = self.segments.as_ref().map(|_| Vec::with_capacity(indices.len()));
        for &i in indices {
            if i >= self.len() {
                return shape_err("SequenceDataset::subset", "index", self.len(), i);
            }
            windows.extend_from_slice(self.window(i));
            labels.push(self.labels[i]);
            if let (Some(dst), Some(src)) = (segments.as_mut(), self.segments.as_ref()) {
                dst.push(src[i].clone());
            }
        }
        Self::new(windows, self.channels, self.seq_len, labels, segments, self.meta.clone())
    }

    fn map_values(&self, mut f: impl FnMut(usize, f64) -> f64) -> Result<Self> {
        let mut out = self.clone();
        let l = self.seq_len;
        for (idx, v) in out.windows.iter_mut().enumerate() {
            let channel = (idx / l) % self.channels;
            *v = f(channel, *v);
        }
        if out.windows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "SequenceDataset::map" });
        }
        Ok(out)
    }
}

/// Floor applied to a channel's standard deviation before dividing.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn compute(dataset: &SequenceDataset) -> Result<Self> {
        if dataset.is_empty() {
            return invalid("ChannelStats", "empty dataset");
        }
        let c = dataset.channels;
        let l = dataset.seq_len;
        let count = (dataset.len() * l) as f64;
        let mut mean = vec![0.0; c];
        for i in 0..dataset.len() {
            let w = dataset.window(i);
            for (ch, m) in mean.iter_mut().enumerate() {
                *m += w[ch * l..(ch + 1) * l].iter().sum::<f64>();
            }
        }
        for m in &mut mean {
            *m /= count;
        }
        let mut var = vec![0.0; c];
        for i in 0..dataset.len() {
            let w = dataset.window(i);
            for (ch, v) in var.iter_mut().enumerate() {
                *v += w[ch * l..(ch + 1) * l]
                    .iter()
                    .map(|x| (x - mean[ch]) * (x - mean[ch]))
                    .sum::<f64>();
            }
        }
        let std = var.into_iter().map(|v| libm::sqrt(v / count)).collect();
        Ok(Self { mean, std })
    }

    fn check(&self, dataset: &SequenceDataset) -> Result<()> {
        if self.mean.len() != dataset.channels || self.std.len() != dataset.channels {
            return shape_err("ChannelStats", "channels", dataset.channels, self.mean.len());
        }
        Ok(())
    }
}

/// Per-channel z-score with `max(std, STD_FLOOR)` in the denominator.
pub fn standardize(dataset: &SequenceDataset, stats: &ChannelStats) -> Result<SequenceDataset> {
    stats.check(dataset)?;
    dataset.map_values(|c, x| (x - stats.mean[c]) / stats.std[c].max(STD_FLOOR))
}

pub fn destandardize(dataset: &SequenceDataset, stats: &ChannelStats) -> Result<SequenceDataset> {
    stats.check(dataset)?;
    dataset.map_values(|c, z| z * stats.std[c].max(STD_FLOOR) + stats.mean[c])
}

/// Index partition produced by [`split_indices`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n` cut into three parts. The first two sizes are
/// `round(n * fraction)`; the test part takes the remainder.
pub fn split_indices(n: usize, fractions: [f64; 3], seed: u64) -> Result<SplitIndices> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return invalid("split", "fractions must be finite and non-negative");
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return invalid("split", format!("fractions sum to {total}, expected 1"));
    }
    let n_train = libm::round(n as f64 * fractions[0]) as usize;
    let n_val = (libm::round(n as f64 * fractions[1]) as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(SplitIndices {
        train: order,
        val,
        test,
    })
}

pub fn split(
    dataset: &SequenceDataset,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(SequenceDataset, SequenceDataset, SequenceDataset)> {
    let idx = split_indices(dataset.len(), fractions, seed)?;
    Ok((
        dataset.subset(&idx.train)?,
        dataset.subset(&idx.val)?,
        dataset.subset(&idx.test)?,
    ))
}
