//! Synthetic weakly labeled sequences: a walking-like background with one
//! foreground activity segment per window whose bounds are kept as ground
//! truth.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{DatasetMeta, SequenceDataset};
use crate::error::{invalid, Result};
use crate::localization::Interval;

pub const CLASS_NAMES: [&str; 4] = ["upstairs", "downstairs", "jumping", "jogging"];

/// Generator parameters. Frequencies are in Hz, lengths in samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    pub seq_len: usize,
    pub channels: usize,
    pub sample_rate_hz: f64,
    pub class_proportions: Vec<f64>,
    pub background_freq_hz: f64,
    pub background_amplitude: f64,
    pub noise_std: f64,
    pub foreground_freq_hz: Vec<f64>,
    pub foreground_amplitude: Vec<f64>,
    /// Classes whose foreground is modulated by bursts.
    pub burst_classes: Vec<usize>,
    pub burst_freq_hz: f64,
    pub segment_len_min: usize,
    pub segment_len_max: usize,
    /// Relative per-window jitter of frequencies and amplitudes.
    pub jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 8000,
            seq_len: 2048,
            channels: 3,
            sample_rate_hz: 50.0,
            class_proportions: vec![0.265, 0.244, 0.185, 0.306],
            background_freq_hz: 2.0,
            background_amplitude: 1.0,
            noise_std: 0.1,
            foreground_freq_hz: vec![1.2, 2.6, 3.6, 3.0],
            foreground_amplitude: vec![1.2, 1.4, 2.5, 1.8],
            burst_classes: vec![2],
            burst_freq_hz: 0.8,
            segment_len_min: 256,
            segment_len_max: 1024,
            jitter: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn num_classes(&self) -> usize {
        self.class_proportions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes();
        if self.n == 0 || self.seq_len == 0 || self.channels == 0 {
            return invalid("SynthConfig", "n, seq_len and channels must be positive");
        }
        if k == 0 || k > CLASS_NAMES.len() {
            return invalid("SynthConfig", format!("between 1 and {} classes supported", CLASS_NAMES.len()));
        }
        if self.foreground_freq_hz.len() != k || self.foreground_amplitude.len() != k {
            return invalid("SynthConfig", "one foreground frequency and amplitude per class");
        }
        if self.class_proportions.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return invalid("SynthConfig", "class proportions must be finite and non-negative");
        }
        let total: f64 = self.class_proportions.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return invalid("SynthConfig", format!("class proportions sum to {total}, expected 1"));
        }
        let positive = [
            self.sample_rate_hz,
            self.background_freq_hz,
            self.burst_freq_hz,
        ];
        if positive.iter().chain(&self.foreground_freq_hz).any(|v| !v.is_finite() || *v <= 0.0) {
            return invalid("SynthConfig", "rates and frequencies must be positive");
        }
        let nonneg = [self.background_amplitude, self.noise_std, self.jitter];
        if nonneg.iter().chain(&self.foreground_amplitude).any(|v| !v.is_finite() || *v < 0.0) {
            return invalid("SynthConfig", "amplitudes, noise and jitter must be non-negative");
        }
        if self.jitter >= 1.0 {
            return invalid("SynthConfig", "jitter must be below 1");
        }
        if self.segment_len_min == 0
            || self.segment_len_min > self.segment_len_max
            || self.segment_len_max > self.seq_len
        {
            return invalid("SynthConfig", "need 0 < segment_len_min <= segment_len_max <= seq_len");
        }
        if self.burst_classes.iter().any(|&c| c >= k) {
            return invalid("SynthConfig", "burst class index out of range");
        }
        Ok(())
    }

    /// Per-class window counts by largest remainder, ties to lower class.
    pub fn class_counts(&self) -> Vec<usize> {
        let exact: Vec<f64> = self.class_proportions.iter().map(|p| p * self.n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| libm::floor(*e) as usize).collect();
        let assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - counts[a] as f64;
            let rb = exact[b] - counts[b] as f64;
            rb.partial_cmp(&ra).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        for &c in order.iter().take(self.n.saturating_sub(assigned)) {
            counts[c] += 1;
        }
        counts
    }
}

/// Sum of a fundamental and its second harmonic at relative amplitude 0.3.
fn mixture(t: f64, freq: f64, phase: f64, phase2: f64) -> f64 {
    libm::sin(2.0 * PI * freq * t + phase) + 0.3 * libm::sin(4.0 * PI * freq * t + phase2)
}

fn jittered(rng: &mut ChaCha8Rng, value: f64, jitter: f64) -> f64 {
    if jitter == 0.0 {
        value
    } else {
        value * (1.0 + rng.random_range(-jitter..jitter))
    }
}

/// Generates the dataset. The same config and seed give bit-identical output.
pub fn synth_weak(config: &SynthConfig, seed: u64) -> Result<SequenceDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = config
        .class_counts()
        .iter()
        .enumerate()
        .flat_map(|(c, &count)| core::iter::repeat_n(c, count))
        .collect();
    labels.shuffle(&mut rng);

    let noise = Normal::new(0.0, config.noise_std).map_err(|e| crate::error::Error::Invalid {
        op: "synth_weak",
        reason: e.to_string(),
    })?;
    let (l, c) = (config.seq_len, config.channels);
    let rate = config.sample_rate_hz;
    let mut windows = Vec::with_capacity(config.n * c * l);
    let mut segments = Vec::with_capacity(config.n);
    for &label in &labels {
        let seg_len = rng.random_range(config.segment_len_min..=config.segment_len_max);
        let start = rng.random_range(0..=l - seg_len);
        let segment = Interval {
            start,
            end: start + seg_len,
        };
        let bg_freq = jittered(&mut rng, config.background_freq_hz, config.jitter);
        let bg_amp = jittered(&mut rng, config.background_amplitude, config.jitter);
        let fg_freq = jittered(&mut rng, config.foreground_freq_hz[label], config.jitter);
        let fg_amp = jittered(&mut rng, config.foreground_amplitude[label], config.jitter);
        let burst = config.burst_classes.contains(&label);
        let burst_phase = rng.random_range(0.0..2.0 * PI);
        for _axis in 0..c {
            let phases: [f64; 4] = core::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
            // Axis gain keeps the channels from being exact copies.
            let gain = rng.random_range(0.6..1.0);
            for i in 0..l {
                let t = i as f64 / rate;
                let clean = if segment.contains(i as f64) {
                    let envelope = if burst {
                        let b = libm::sin(2.0 * PI * config.burst_freq_hz * (t - start as f64 / rate) + burst_phase);
                        b * b
                    } else {
                        1.0
                    };
                    fg_amp * envelope * mixture(t, fg_freq, phases[2], phases[3])
                } else {
                    bg_amp * mixture(t, bg_freq, phases[0], phases[1])
                };
                windows.push(gain * clean + noise.sample(&mut rng));
            }
        }
        segments.push(vec![segment]);
    }
    let meta = DatasetMeta {
        class_names: CLASS_NAMES[..config.num_classes()].iter().map(|s| s.to_string()).collect(),
        channel_names: (0..c).map(|a| axis_name(a)).collect(),
        sample_rate_hz: rate,
    };
    SequenceDataset::new(windows, c, l, labels, Some(segments), meta)
}

fn axis_name(axis: usize) -> String {
    match axis {
        0 => "acc_x".to_string(),
        1 => "acc_y".to_string(),
        2 => "acc_z".to_string(),
        a => format!("acc_{a}"),
    }
}
