//! Per-epoch metrics, one JSON object per line.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: u64,
    pub step: u64,
    pub train_loss: f64,
    pub train_acc: f64,
    /// Absent when the run has no held-out split.
    pub test_acc: Option<f64>,
    pub lr: f32,
    /// Seconds since the run (or resumed run) started.
    pub wall_time: f64,
    pub images_per_sec: f64,
}

impl MetricsRecord {
    /// Copy with the timing fields zeroed, for run-to-run comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time: 0.0,
            images_per_sec: 0.0,
            ..self.clone()
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

/// Append-only JSON-lines sink.
pub struct MetricsWriter {
    file: File,
}

impl MetricsWriter {
    /// Opens `path` for appending, truncating it first unless `append`.
    pub fn open(path: impl AsRef<Path>, append: bool) -> Result<Self> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(append)
            .write(true)
            .truncate(!append)
            .open(path)?;
        Ok(Self { file })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        writeln!(self.file, "{}", record.to_line())?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
