use std::path::Path;

use attnhar_core::train::{EpochRecord, TrainHistory};

use crate::error::{Error, Result};

pub const HISTORY_COLUMNS: [&str; 5] = ["epoch", "loss", "train_acc", "val_acc", "seconds"];

pub fn write_history(path: &Path, history: &TrainHistory) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(HISTORY_COLUMNS).map_err(csv_err)?;
    for r in &history.epochs {
        w.write_record([
            r.epoch.to_string(),
            r.loss.to_string(),
            r.train_acc.to_string(),
            r.val_acc.map_or_else(String::new, |v| v.to_string()),
            r.seconds.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read_history(path: &Path) -> Result<TrainHistory> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut epochs = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let field = |k: usize| -> Result<f64> {
            row.get(k).unwrap_or("").parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                reason: format!("bad {} value", HISTORY_COLUMNS[k]),
            })
        };
        let val = row.get(3).unwrap_or("");
        epochs.push(EpochRecord {
            epoch: field(0)? as usize,
            loss: field(1)?,
            train_acc: field(2)?,
            val_acc: if val.is_empty() { None } else { Some(field(3)?) },
            seconds: field(4)?,
        });
    }
    Ok(TrainHistory { epochs })
}
