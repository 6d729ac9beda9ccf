//! Reader for the raw inertial signals of the UCI HAR dataset.
//!
//! Expected layout under the dataset root:
//! `<split>/Inertial Signals/{body_acc,body_gyro}_{x,y,z}_<split>.txt` with one
//! 128-sample window per line, and `<split>/y_<split>.txt` with one label in
//! 1..=6 per line.

use std::fs;
use std::path::{Path, PathBuf};

use attnhar_core::data::{DatasetMeta, SequenceDataset};

use crate::error::{io_err, Error, Result};

pub const WINDOW_LEN: usize = 128;
pub const SAMPLE_RATE_HZ: f64 = 50.0;

/// Linear acceleration then angular velocity, x/y/z each.
pub const SIGNALS: [&str; 6] = [
    "body_acc_x",
    "body_acc_y",
    "body_acc_z",
    "body_gyro_x",
    "body_gyro_y",
    "body_gyro_z",
];

pub const CLASS_NAMES: [&str; 6] = [
    "WALKING",
    "WALKING_UPSTAIRS",
    "WALKING_DOWNSTAIRS",
    "SITTING",
    "STANDING",
    "LAYING",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

pub fn signal_path(root: &Path, split: Split, signal: &str) -> PathBuf {
    root.join(split.name())
        .join("Inertial Signals")
        .join(format!("{signal}_{}.txt", split.name()))
}

pub fn label_path(root: &Path, split: Split) -> PathBuf {
    root.join(split.name()).join(format!("y_{}.txt", split.name()))
}

/// Parses one signal file into rows of exactly [`WINDOW_LEN`] values.
pub fn parse_signal_file(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_signal_text(&text, path)
}

pub fn parse_signal_text(text: &str, path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        reason: format!("not a finite number: {tok:?}"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != WINDOW_LEN {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: format!("expected {WINDOW_LEN} values, found {}", row.len()),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Labels remapped from 1..=6 to 0..=5.
pub fn parse_label_file(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tok = line.trim();
        if tok.is_empty() {
            continue;
        }
        match tok.parse::<usize>() {
            Ok(v) if (1..=CLASS_NAMES.len()).contains(&v) => labels.push(v - 1),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: format!("label {tok:?} outside 1..={}", CLASS_NAMES.len()),
                })
            }
        }
    }
    Ok(labels)
}

/// Loads one split as `[N, 6, 128]` windows.
pub fn load_ucihar(root: &Path, split: Split) -> Result<SequenceDataset> {
    let labels_file = label_path(root, split);
    let labels = parse_label_file(&labels_file)?;
    let n = labels.len();
    let mut per_signal = Vec::with_capacity(SIGNALS.len());
    for signal in SIGNALS {
        let path = signal_path(root, split, signal);
        let rows = parse_signal_file(&path)?;
        if rows.len() != n {
            return Err(Error::Parse {
                path,
                line: rows.len().min(n) + 1,
                reason: format!("{} windows but {} has {n} labels", rows.len(), labels_file.display()),
            });
        }
        per_signal.push(rows);
    }
    let mut windows = Vec::with_capacity(n * SIGNALS.len() * WINDOW_LEN);
    for i in 0..n {
        for rows in &per_signal {
            windows.extend_from_slice(&rows[i]);
        }
    }
    let meta = DatasetMeta {
        class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        channel_names: SIGNALS.iter().map(|s| s.to_string()).collect(),
        sample_rate_hz: SAMPLE_RATE_HZ,
    };
    Ok(SequenceDataset::new(windows, SIGNALS.len(), WINDOW_LEN, labels, None, meta)?)
}

/// Formats a value the way the dataset files print it, e.g. `2.8858451e-001`.
pub fn format_like_source(v: f64) -> String {
    let s = format!("{v:.7e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:03}", exp.abs())
}
