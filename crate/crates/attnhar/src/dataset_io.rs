//! On-disk dataset format: raw little-endian f64 samples in `[N, C, L]` order
//! (`<stem>.bin`) plus a JSON sidecar (`<stem>.json`).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use attnhar_core::data::{DatasetMeta, SequenceDataset};
use attnhar_core::localization::Interval;
use attnhar_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "C")]
    pub c: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub labels: Vec<usize>,
    pub segments: Option<Vec<Vec<Interval>>>,
    pub class_names: Vec<String>,
    pub channel_names: Vec<String>,
    pub sample_rate_hz: f64,
    pub seed: Option<u64>,
    pub config: Option<SynthConfig>,
}

pub fn bin_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

pub fn sidecar_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

pub fn save_dataset(stem: &Path, dataset: &SequenceDataset, seed: Option<u64>, config: Option<&SynthConfig>) -> Result<()> {
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let bin = bin_path(stem);
    let file = fs::File::create(&bin).map_err(io_err(&bin))?;
    let mut w = BufWriter::new(file);
    for v in dataset.windows() {
        w.write_all(&v.to_le_bytes()).map_err(io_err(&bin))?;
    }
    w.flush().map_err(io_err(&bin))?;

    let meta = dataset.meta();
    let sidecar = Sidecar {
        n: dataset.len(),
        c: dataset.channels(),
        l: dataset.seq_len(),
        labels: dataset.labels().to_vec(),
        segments: dataset.segments().map(<[_]>::to_vec),
        class_names: meta.class_names.clone(),
        channel_names: meta.channel_names.clone(),
        sample_rate_hz: meta.sample_rate_hz,
        seed,
        config: config.cloned(),
    };
    let json_path = sidecar_path(stem);
    let text = serde_json::to_string_pretty(&sidecar).map_err(json_err(&json_path))?;
    fs::write(&json_path, text).map_err(io_err(&json_path))
}

pub fn load_sidecar(stem: &Path) -> Result<Sidecar> {
    let path = sidecar_path(stem);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(json_err(&path))
}

pub fn load_dataset(stem: &Path) -> Result<(SequenceDataset, Sidecar)> {
    let sidecar = load_sidecar(stem)?;
    let bin = bin_path(stem);
    let bytes = fs::read(&bin).map_err(io_err(&bin))?;
    let expected = sidecar.n * sidecar.c * sidecar.l * 8;
    if bytes.len() != expected {
        return Err(Error::Parse {
            path: bin,
            line: 0,
            reason: format!("expected {expected} bytes for [{}, {}, {}], found {}", sidecar.n, sidecar.c, sidecar.l, bytes.len()),
        });
    }
    let windows = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    let meta = DatasetMeta {
        class_names: sidecar.class_names.clone(),
        channel_names: sidecar.channel_names.clone(),
        sample_rate_hz: sidecar.sample_rate_hz,
    };
    let ds = SequenceDataset::new(windows, sidecar.c, sidecar.l, sidecar.labels.clone(), sidecar.segments.clone(), meta)?;
    Ok((ds, sidecar))
}
