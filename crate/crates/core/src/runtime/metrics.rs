//! Per-epoch metrics CSV and the end-of-run JSON summary.
//!
//! The CSV starts with a `# sgamma-metrics v1` line followed by a header row
//! of the [`MetricsRow`] fields. Optional columns are left empty when they do
//! not apply (no hidden layer, no target spike time).

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_PREAMBLE: &str = "# sgamma-metrics v1";
pub const SUMMARY_SCHEMA: &str = "sgamma-summary v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    /// Best test accuracy over all epochs so far.
    pub peak_test_acc: f64,
    pub spike_density: Option<f64>,
    pub timing_error: Option<f64>,
    /// Output-layer learning rate in this epoch.
    pub lr: f64,
}

const HEADER: [&str; 9] = [
    "epoch",
    "train_loss",
    "train_acc",
    "test_loss",
    "test_acc",
    "peak_test_acc",
    "spike_density",
    "timing_error",
    "lr",
];

/// Appends rows and flushes each one to disk before returning.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| Error::file(path, e))?;
        writeln!(file, "{METRICS_PREAMBLE}").map_err(|e| Error::file(path, e))?;
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        inner.write_record(HEADER)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    /// Continue an existing file, dropping rows from `from_epoch` on so a
    /// resumed run never duplicates epochs.
    pub fn resume(path: &Path, from_epoch: usize) -> Result<Self> {
        let kept: Vec<MetricsRow> = read_metrics(path)?.into_iter().filter(|r| r.epoch < from_epoch).collect();
        let mut writer = Self::create(path)?;
        for row in &kept {
            writer.write(row)?;
        }
        Ok(writer)
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if first.trim_end() != METRICS_PREAMBLE {
        return Err(Error::Config(format!("{}: not a metrics file", path.display())));
    }
    let mut csv = csv::Reader::from_reader(reader);
    csv.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: String,
    pub config_hash: String,
    pub seed: u64,
    pub epochs: usize,
    /// Train loss of the first recorded epoch.
    pub initial_train_loss: Option<f64>,
    /// Metrics of the final epoch; its test accuracy is the headline number.
    pub final_epoch: Option<MetricsRow>,
    pub peak_test_acc: Option<f64>,
    pub parameters: usize,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

impl RunSummary {
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        serde_json::to_writer_pretty(&file, self)?;
        writeln!(&file).map_err(|e| Error::file(path, e))?;
        Ok(())
    }
}
