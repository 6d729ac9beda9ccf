//! Compatibility curves, density peaks and activity windows for a trained
//! attention model.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use attnhar_core::attention::CompatibilityProfile;
use attnhar_core::localization::{localization_metrics, localize, DensityCurve, Interval, LocalizationResult};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{io_err, json_err, Error, Result};
use crate::run::{load_for_inference, Overrides};

pub const WINDOWS_FILE: &str = "windows.json";
pub const LOCATE_METRICS_FILE: &str = "locate_metrics.json";
pub const CURVE_COLUMNS: [&str; 5] = ["feature_index", "score", "weight", "density", "raw_center"];
pub const PROFILE_COLUMNS: [&str; 4] = ["level", "index", "score", "weight"];

pub fn curve_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("seq_{index}_curve.csv"))
}

pub fn profile_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("seq_{index}_profile.csv"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceWindows {
    /// Index into the evaluated split.
    pub index: usize,
    pub label: usize,
    #[serde(flatten)]
    pub result: LocalizationResult,
    pub ground_truth: Option<Vec<Interval>>,
    pub hit_rate: Option<f64>,
    pub mean_best_iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocateReport {
    pub split: String,
    pub w: usize,
    /// Level whose scores feed the density, counted from the shallowest active tap.
    pub level: usize,
    pub positions: usize,
    pub stride_to_raw: usize,
    pub sequences: usize,
    pub windows: usize,
    pub curves_written: usize,
    /// Fraction of all predicted windows whose center lies in ground truth.
    pub hit_rate: Option<f64>,
    pub mean_best_iou: Option<f64>,
    /// Per-sequence rates averaged over sequences with at least one window.
    pub macro_hit_rate: Option<f64>,
    pub macro_mean_best_iou: Option<f64>,
}

fn write_curve(path: &Path, profile: &CompatibilityProfile, curve: &DensityCurve) -> Result<()> {
    let mut wr = csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    wr.write_record(CURVE_COLUMNS).map_err(csv_err)?;
    for i in 0..profile.len() {
        wr.write_record([
            i.to_string(),
            profile.scores[i].to_string(),
            profile.weights[i].to_string(),
            curve.values[i].to_string(),
            (i * curve.stride_to_raw).to_string(),
        ])
        .map_err(csv_err)?;
    }
    wr.flush().map_err(io_err(path))
}

fn write_profiles(path: &Path, profiles: &[CompatibilityProfile]) -> Result<()> {
    let mut wr = csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    wr.write_record(PROFILE_COLUMNS).map_err(csv_err)?;
    for p in profiles {
        for i in 0..p.len() {
            wr.write_record([
                p.level.to_string(),
                i.to_string(),
                p.scores[i].to_string(),
                p.weights[i].to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    wr.flush().map_err(io_err(path))
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn locate_run(config: &RunConfig, overrides: Overrides) -> Result<LocateReport> {
    let (ckpt, model, run, data) = load_for_inference(config, overrides)?;
    if ckpt.model_spec.attention_levels == 0 {
        return Err(Error::Config("localization requires attention (checkpoint has no attention levels)".to_string()));
    }
    let ds = data.split(&run.eval_split)?;
    let indices: Vec<usize> = match &run.locate.sequences {
        Some(list) => {
            if let Some(&bad) = list.iter().find(|&&i| i >= ds.len()) {
                return Err(Error::Config(format!(
                    "sequence {bad} is out of range for the {} split of {} sequences",
                    run.eval_split,
                    ds.len()
                )));
            }
            list.clone()
        }
        None => (0..ds.len()).collect(),
    };
    // The deepest active tap carries the most context per position.
    let tap = *model
        .active_taps()
        .last()
        .ok_or_else(|| Error::Config("localization requires attention".to_string()))?;
    let level = model.active_taps().len();
    let out = &config.out;
    fs::create_dir_all(out).map_err(io_err(out))?;

    let mut located = Vec::with_capacity(indices.len());
    let mut curves_written = 0;
    for chunk in indices.chunks(run.train.batch_size.max(1)) {
        let (x, labels) = ds.batch(chunk)?;
        let profiles = model.compatibility_profiles(&x)?;
        for ((&index, label), levels) in chunk.iter().zip(labels).zip(profiles) {
            let deepest = &levels[level - 1];
            let (curve, result) = localize(&deepest.scores, run.w, level, tap.stride_to_raw, ds.seq_len())?;
            if curves_written < run.locate.emit {
                write_curve(&curve_path(out, index), deepest, &curve)?;
                write_profiles(&profile_path(out, index), &levels)?;
                curves_written += 1;
            }
            let ground_truth = ds.segments().map(|s| s[index].clone());
            let metrics = ground_truth
                .as_ref()
                .map(|gt| localization_metrics(&result.windows, gt))
                .transpose()?;
            located.push(SequenceWindows {
                index,
                label,
                result,
                ground_truth,
                hit_rate: metrics.map(|m| m.hit_rate),
                mean_best_iou: metrics.map(|m| m.mean_best_iou),
            });
        }
    }

    let has_truth = ds.segments().is_some();
    let total_windows: usize = located.iter().map(|s| s.result.windows.len()).sum();
    let (hit_rate, mean_best_iou) = if has_truth && total_windows > 0 {
        let weighted = |f: fn(&SequenceWindows) -> Option<f64>| {
            located
                .iter()
                .map(|s| f(s).unwrap_or(0.0) * s.result.windows.len() as f64)
                .sum::<f64>()
                / total_windows as f64
        };
        (Some(weighted(|s| s.hit_rate)), Some(weighted(|s| s.mean_best_iou)))
    } else if has_truth {
        (Some(0.0), Some(0.0))
    } else {
        (None, None)
    };
    let with_windows = || located.iter().filter(|s| !s.result.windows.is_empty());
    let report = LocateReport {
        split: run.eval_split.clone(),
        w: run.w,
        level,
        positions: tap.positions,
        stride_to_raw: tap.stride_to_raw,
        sequences: located.len(),
        windows: total_windows,
        curves_written,
        hit_rate,
        mean_best_iou,
        macro_hit_rate: if has_truth { mean(with_windows().filter_map(|s| s.hit_rate)) } else { None },
        macro_mean_best_iou: if has_truth { mean(with_windows().filter_map(|s| s.mean_best_iou)) } else { None },
    };

    let path = out.join(WINDOWS_FILE);
    let mut file = std::io::BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?);
    serde_json::to_writer_pretty(&mut file, &located).map_err(json_err(&path))?;
    file.flush().map_err(io_err(&path))?;
    let path = out.join(LOCATE_METRICS_FILE);
    let text = serde_json::to_string_pretty(&report).map_err(json_err(&path))?;
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(report)
}
