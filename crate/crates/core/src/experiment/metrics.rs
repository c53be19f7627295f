use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "iteration,wall_ms,lr,train_loss,train_acc,test_acc,grad_norm";

/// One training iteration. `test_acc` is empty on rows without evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub wall_ms: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub grad_norm: f64,
}

/// Appends rows to a metrics file, flushing each one.
pub struct MetricsWriter {
    out: BufWriter<File>,
    last: Option<usize>,
    path: std::path::PathBuf,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = MetricsWriter {
            out: BufWriter::new(file),
            last: None,
            path: path.to_path_buf(),
        };
        w.line(METRICS_HEADER)?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn push(&mut self, r: &MetricsRow) -> Result<()> {
        if self.last.is_some_and(|l| r.iteration <= l) {
            return Err(Error::InvalidArgument(format!(
                "metrics iteration {} does not follow {}",
                r.iteration,
                self.last.unwrap()
            )));
        }
        self.last = Some(r.iteration);
        let test = r.test_acc.map(|a| a.to_string()).unwrap_or_default();
        self.line(&format!(
            "{},{},{},{},{},{},{}",
            r.iteration, r.wall_ms, r.lr, r.train_loss, r.train_acc, test, r.grad_norm
        ))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != METRICS_HEADER {
        return Err(Error::format(
            path.display().to_string(),
            format!("header {:?}, expected {METRICS_HEADER:?}", header.join(",")),
        ));
    }
    rdr.deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// First iteration at which the mean training loss over the trailing
/// `window` iterations is at most `threshold`.
pub fn iterations_to_loss(rows: &[MetricsRow], threshold: f64, window: usize) -> Option<usize> {
    let window = window.max(1);
    let mut sum = 0.0;
    for (i, r) in rows.iter().enumerate() {
        sum += r.train_loss;
        if i >= window {
            sum -= rows[i - window].train_loss;
        }
        if i + 1 >= window && sum / window as f64 <= threshold {
            return Some(r.iteration);
        }
    }
    None
}

/// Last evaluated test accuracy.
pub fn final_test_acc(rows: &[MetricsRow]) -> Option<f64> {
    rows.iter().rev().find_map(|r| r.test_acc)
}
