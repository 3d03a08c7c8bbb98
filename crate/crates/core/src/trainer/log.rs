//! Per-epoch CSV history.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str =
    "epoch,loss,accuracy,dice_coefficient,iou,val_loss,val_accuracy,val_dice_coefficient,val_iou,learning_rate";

/// Metrics of one completed epoch. Validation fields are NaN when the split
/// has no validation samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    #[serde(rename = "dice_coefficient")]
    pub dice: f64,
    pub iou: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    #[serde(rename = "val_dice_coefficient")]
    pub val_dice: f64,
    pub val_iou: f64,
    /// Learning rate used during this epoch.
    pub learning_rate: f64,
}

fn row_bytes(entry: &EpochLog) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.serialize(entry).expect("epoch rows serialize");
    w.into_inner().expect("in-memory writer")
}

/// Appends one row per epoch, each with a single write.
pub struct CsvLogger {
    path: PathBuf,
    file: File,
}

impl CsvLogger {
    /// Create (truncate) the log and write the header.
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(format!("{CSV_HEADER}\n").as_bytes())
            .map_err(|e| Error::io(path, e))?;
        file.sync_data().map_err(|e| Error::io(path, e))?;
        let file = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(CsvLogger {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, entry: &EpochLog) -> Result<()> {
        self.file
            .write_all(&row_bytes(entry))
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Write a complete history (header only when empty).
pub fn csv_log(history: &[EpochLog], path: &Path) -> Result<()> {
    let mut logger = CsvLogger::create(path)?;
    for entry in history {
        logger.append(entry)?;
    }
    Ok(())
}

pub fn read_csv_log(path: &Path) -> Result<Vec<EpochLog>> {
    let file = File::open(path).map_err(|e| if e.kind() == std::io::ErrorKind::NotFound {
        Error::NotFound(path.to_path_buf())
    } else {
        Error::io(path, e)
    })?;
    let mut reader = csv::Reader::from_reader(file);
    let header = reader.headers().map_err(|e| Error::format(path, e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(Error::format(path, "unexpected CSV header"));
    }
    reader
        .deserialize()
        .map(|row| row.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}
